//! Logit-adjusted cross-entropy with compensation for unseen classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::sampling::ClassSplit;

/// Class prior probabilities over all K classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPriors {
    pub p: Vec<f64>,
}

impl ClassPriors {
    pub fn uniform(k: usize) -> Self {
        ClassPriors {
            p: vec![1.0 / k as f64; k],
        }
    }

    pub fn log(&self) -> Vec<f64> {
        self.p.iter().map(|p| p.ln()).collect()
    }
}

/// Priors from training counts; every new class counts as one sample.
///
/// `counts[c]` is the number of training images of class `c` (entries for
/// new classes are ignored).
pub fn estimate_priors(counts: &[usize], split: &ClassSplit) -> Result<ClassPriors> {
    let k = split.num_classes();
    split.validate(k)?;
    let mut effective = vec![1.0; k];
    for &c in &split.base_ids {
        let n = counts.get(c).copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::Coverage {
                class: c,
                name: format!("class {c}"),
            });
        }
        effective[c] = n as f64;
    }
    let total: f64 = effective.iter().sum();
    Ok(ClassPriors {
        p: effective.into_iter().map(|n| n / total).collect(),
    })
}

/// Mean over rows of `−log softmax(z + log p)[y]`.
pub fn cla_loss(z: &Mat, labels: &[usize], log_priors: &[f64]) -> Result<f64> {
    cla_loss_with_grad(z, labels, log_priors).map(|(l, _)| l)
}

/// Loss value and its gradient with respect to `z`.
pub fn cla_loss_with_grad(z: &Mat, labels: &[usize], log_priors: &[f64]) -> Result<(f64, Mat)> {
    let (b, k) = z.shape();
    if labels.len() != b {
        return Err(Error::Parameter(format!("{} labels for {b} logit rows", labels.len())));
    }
    if log_priors.len() != k {
        return Err(Error::Parameter(format!("{} priors for {k} classes", log_priors.len())));
    }
    if b == 0 {
        return Err(Error::Parameter("empty batch".into()));
    }
    if !z.is_finite() {
        return Err(Error::Numerical("non-finite logits".into()));
    }
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;
    let mut grad = Mat::zeros(b, k);
    let mut shifted = vec![0.0; k];
    for i in 0..b {
        let y = labels[i];
        if y >= k {
            return Err(Error::Parameter(format!("label {y} outside 0..{k}")));
        }
        let mut max = f64::NEG_INFINITY;
        for ((s, &zv), &lp) in shifted.iter_mut().zip(z.row(i)).zip(log_priors) {
            *s = zv + lp;
            max = max.max(*s);
        }
        let mut sum = 0.0;
        for s in &mut shifted {
            *s = (*s - max).exp();
            sum += *s;
        }
        total += sum.ln() - (z.get(i, y) + log_priors[y] - max);
        let g = grad.row_mut(i);
        for (gv, &e) in g.iter_mut().zip(&shifted) {
            *gv = e / sum * inv_b;
        }
        g[y] -= inv_b;
    }
    Ok((total * inv_b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(base: &[usize], new: &[usize]) -> ClassSplit {
        ClassSplit {
            base_ids: base.to_vec(),
            new_ids: new.to_vec(),
        }
    }

    #[test]
    fn priors_count_new_classes_once() {
        let p = estimate_priors(&[3, 1, 0], &split(&[0, 1], &[2])).unwrap();
        let want = [0.6, 0.2, 0.2];
        for (a, b) in p.p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn balanced_priors_are_uniform() {
        let p = estimate_priors(&[7, 7, 7, 7], &split(&[0, 1, 2, 3], &[])).unwrap();
        assert_eq!(p, ClassPriors::uniform(4));
    }

    #[test]
    fn decayed_priors_normalize() {
        let p = estimate_priors(&[100, 10, 1, 0, 0, 0], &split(&[0, 1, 2], &[3, 4, 5])).unwrap();
        let want = [100.0, 10.0, 1.0, 1.0, 1.0, 1.0].map(|n| n / 114.0);
        for (a, b) in p.p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_base_class_rejected() {
        assert!(estimate_priors(&[3, 0, 0], &split(&[0, 1], &[2])).is_err());
    }

    #[test]
    fn symmetric_two_class() {
        let z = Mat::from_rows(&[vec![0.0, 0.0]]);
        let l = cla_loss(&z, &[0], &ClassPriors::uniform(2).log()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn three_class_scalar_oracle() {
        // −log(e^{0+ln .2} / (e^{1+ln .7} + e^{0+ln .2} + e^{0+ln .1}))
        //   = ln(0.7e + 0.3) − ln 0.2
        let want = (0.7 * std::f64::consts::E + 0.3).ln() - 0.2f64.ln();
        let z = Mat::from_rows(&[vec![1.0, 0.0, 0.0]]);
        let p = ClassPriors { p: vec![0.7, 0.2, 0.1] };
        let got = cla_loss(&z, &[1], &p.log()).unwrap();
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        // 30-digit evaluation of the same expression.
        assert!((got - 2.399_165_956_011_731_6).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let z = Mat::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.5, 0.2, -0.7]]);
        let lp = ClassPriors { p: vec![0.5, 0.3, 0.2] }.log();
        let y = [2, 0];
        let (_, g) = cla_loss_with_grad(&z, &y, &lp).unwrap();
        let eps = 1e-6;
        for k in 0..6 {
            let mut zp = z.clone();
            zp.as_mut_slice()[k] += eps;
            let mut zm = z.clone();
            zm.as_mut_slice()[k] -= eps;
            let fd = (cla_loss(&zp, &y, &lp).unwrap() - cla_loss(&zm, &y, &lp).unwrap()) / (2.0 * eps);
            assert!((fd - g.as_slice()[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        let z = Mat::from_rows(&[vec![f64::NAN, 0.0]]);
        assert!(matches!(cla_loss(&z, &[0], &[0.0, 0.0]), Err(Error::Numerical(_))));
    }
}
