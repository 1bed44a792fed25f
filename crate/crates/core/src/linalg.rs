//! Dense row-major `f64` matrices with the handful of products the head needs.

use crate::error::{Error, Result};

/// Norms below this are treated as degenerate when normalizing.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape does not match data length");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &bv) in dst.iter_mut().zip(b) {
                    *d += a * bv;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Mat {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Mat]) -> Mat {
        let cols = parts.iter().find(|m| m.rows > 0).map_or(
            parts.first().map_or(0, |m| m.cols),
            |m| m.cols,
        );
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.rows == 0 {
                continue;
            }
            assert_eq!(p.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Mat { rows, cols, data }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Mat {
        Mat {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Mat {
        Mat::from_fn(self.rows, end - start, |i, j| self.get(i, start + j))
    }

    /// Adds `src` into columns `start..start + src.cols()`.
    pub fn add_into_cols(&mut self, start: usize, src: &Mat) {
        assert_eq!(self.rows, src.rows);
        for i in 0..self.rows {
            for j in 0..src.cols {
                self.data[i * self.cols + start + j] += src.get(i, j);
            }
        }
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|i| norm(self.row(i))).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Row-wise L2 normalization that remembers the norms for the backward pass.
#[derive(Clone, Debug)]
pub struct RowNormalized {
    pub out: Mat,
    pub norms: Vec<f64>,
}

impl RowNormalized {
    pub fn forward(x: &Mat) -> Result<Self> {
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let n = norm(x.row(i));
            if !(n >= MIN_NORM) {
                return Err(Error::Degenerate { row: i, norm: n });
            }
            for v in out.row_mut(i) {
                *v /= n;
            }
            norms.push(n);
        }
        Ok(RowNormalized { out, norms })
    }

    /// Gradient with respect to the unnormalized input.
    pub fn backward(&self, grad_out: &Mat) -> Mat {
        let mut g = Mat::zeros(self.out.rows(), self.out.cols());
        for i in 0..self.out.rows() {
            let y = self.out.row(i);
            let dy = grad_out.row(i);
            let proj = dot(dy, y);
            let n = self.norms[i];
            for ((gv, &dyv), &yv) in g.row_mut(i).iter_mut().zip(dy).zip(y) {
                *gv = (dyv - yv * proj) / n;
            }
        }
        g
    }
}

pub fn normalize_rows(x: &Mat) -> Result<Mat> {
    RowNormalized::forward(x).map(|r| r.out)
}

/// Cosine-similarity logits `cos(aᵢ, bⱼ) / τ` with cached intermediates.
#[derive(Clone, Debug)]
pub struct CosineLogits {
    pub a: RowNormalized,
    pub b: RowNormalized,
    pub inv_tau: f64,
    pub logits: Mat,
}

impl CosineLogits {
    pub fn forward(a: &Mat, b: &Mat, tau: f64) -> Result<Self> {
        let a = RowNormalized::forward(a)?;
        let b = RowNormalized::forward(b)?;
        let inv_tau = 1.0 / tau;
        let logits = a.out.matmul_nt(&b.out).scaled(inv_tau);
        Ok(CosineLogits {
            a,
            b,
            inv_tau,
            logits,
        })
    }

    /// Returns gradients with respect to the unnormalized `a` and `b`.
    pub fn backward(&self, grad_logits: &Mat) -> (Mat, Mat) {
        let g = grad_logits.scaled(self.inv_tau);
        let da_n = g.matmul(&self.b.out);
        let db_n = g.t_matmul(&self.a.out);
        (self.a.backward(&da_n), self.b.backward(&db_n))
    }
}
