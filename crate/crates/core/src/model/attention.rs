//! One layer of multi-head scaled dot-product self-attention with a residual
//! connection: `out = X + concat_h(softmax(Q_h K_hᵀ / √d_h) V_h) W_Oᵀ`.
//!
//! Tokens carry no position, so the layer is permutation equivariant when
//! nothing is masked. Masked pairs get a score of −∞; a token whose whole row
//! is masked receives a zero context vector and passes through unchanged.

use serde::{Deserialize, Serialize};

use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMask {
    #[default]
    None,
    /// Visual tokens (images and visual/virtual prototypes) do not attend to each other.
    MaskWithinVisual,
    /// Textual prototypes do not attend to each other.
    MaskWithinText,
    /// No attention between the visual and the textual part.
    MaskCross,
}

impl AttentionMask {
    pub const ALL: [AttentionMask; 4] = [
        AttentionMask::None,
        AttentionMask::MaskWithinVisual,
        AttentionMask::MaskWithinText,
        AttentionMask::MaskCross,
    ];

    /// Whether a token at `i` may attend to the token at `j`, given the
    /// first `n_visual` tokens form the visual part.
    pub fn allows(self, i: usize, j: usize, n_visual: usize) -> bool {
        let (vi, vj) = (i < n_visual, j < n_visual);
        match self {
            AttentionMask::None => true,
            AttentionMask::MaskWithinVisual => !(vi && vj),
            AttentionMask::MaskWithinText => vi || vj,
            AttentionMask::MaskCross => vi == vj,
        }
    }
}

/// Borrowed view of the attention weights, each `D × D`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights<'a> {
    pub query: &'a Mat,
    pub key: &'a Mat,
    pub value: &'a Mat,
    pub output: &'a Mat,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    input: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Row-stochastic (or all-zero) attention maps, one per head.
    probs: Vec<Mat>,
    context: Mat,
    scale: f64,
}

#[derive(Clone, Debug)]
pub struct AttentionGrads {
    pub input: Mat,
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
    pub output: Mat,
}

pub fn attention_forward(
    x: &Mat,
    w: AttentionWeights<'_>,
    mask: AttentionMask,
    n_visual: usize,
) -> (Mat, AttentionCache) {
    let (n, d) = x.shape();
    assert!(w.heads > 0 && d % w.heads == 0, "dim must be divisible by heads");
    let dh = d / w.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.matmul_nt(w.query);
    let k = x.matmul_nt(w.key);
    let v = x.matmul_nt(w.value);

    let mut context = Mat::zeros(n, d);
    let mut probs = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q.slice_cols(lo, hi);
        let kh = k.slice_cols(lo, hi);
        let vh = v.slice_cols(lo, hi);
        let mut p = qh.matmul_nt(&kh);
        for i in 0..n {
            let row = p.row_mut(i);
            let mut max = f64::NEG_INFINITY;
            for (j, s) in row.iter_mut().enumerate() {
                if mask.allows(i, j, n_visual) {
                    *s *= scale;
                    max = max.max(*s);
                } else {
                    *s = f64::NEG_INFINITY;
                }
            }
            if max == f64::NEG_INFINITY {
                row.fill(0.0);
                continue;
            }
            let mut total = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for s in row.iter_mut() {
                *s /= total;
            }
        }
        context.add_into_cols(lo, &p.matmul(&vh));
        probs.push(p);
    }
    let mut out = context.matmul_nt(w.output);
    out.add_assign(x);
    let cache = AttentionCache {
        input: x.clone(),
        q,
        k,
        v,
        probs,
        context,
        scale,
    };
    (out, cache)
}

pub fn attention_backward(cache: &AttentionCache, w: AttentionWeights<'_>, grad_out: &Mat) -> AttentionGrads {
    let (n, d) = cache.input.shape();
    let dh = d / w.heads;
    let d_output = grad_out.t_matmul(&cache.context);
    let d_context = grad_out.matmul(w.output);

    let mut dq = Mat::zeros(n, d);
    let mut dk = Mat::zeros(n, d);
    let mut dv = Mat::zeros(n, d);
    for (h, p) in cache.probs.iter().enumerate() {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let dc = d_context.slice_cols(lo, hi);
        let vh = cache.v.slice_cols(lo, hi);
        let mut ds = dc.matmul_nt(&vh);
        dv.add_into_cols(lo, &p.t_matmul(&dc));
        // Softmax backward; masked entries have p = 0 and drop out.
        for i in 0..n {
            let pr = p.row(i);
            let row = ds.row_mut(i);
            let inner: f64 = row.iter().zip(pr).map(|(g, p)| g * p).sum();
            for (g, &pv) in row.iter_mut().zip(pr) {
                *g = pv * (*g - inner) * cache.scale;
            }
        }
        dq.add_into_cols(lo, &ds.matmul(&cache.k.slice_cols(lo, hi)));
        dk.add_into_cols(lo, &ds.t_matmul(&cache.q.slice_cols(lo, hi)));
    }

    let mut d_input = grad_out.clone();
    d_input.add_assign(&dq.matmul(w.query));
    d_input.add_assign(&dk.matmul(w.key));
    d_input.add_assign(&dv.matmul(w.value));
    AttentionGrads {
        input: d_input,
        query: dq.t_matmul(&cache.input),
        key: dk.t_matmul(&cache.input),
        value: dv.t_matmul(&cache.input),
        output: d_output,
    }
}
