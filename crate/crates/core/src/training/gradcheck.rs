//! Finite-difference verification of the analytic gradients.

use serde::{Deserialize, Serialize};

use super::config::{LossKind, TrainConfig};
use super::loss::ClassPriors;
use super::objective::{backward, total_loss, Trainable};
use crate::error::Result;
use crate::linalg::{normalize_rows, Mat};
use crate::model::{AttentionMask, ModelParams};
use crate::prototypes::PrototypeSet;
use crate::rng::Rng;
use crate::sampling::ClassSplit;

/// Relative error threshold for a passing check.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub dim: usize,
    pub heads: usize,
    pub batch: usize,
    pub num_base: usize,
    pub num_new: usize,
    pub epsilon: f64,
    pub tau_t: f64,
    pub tau_v: f64,
    pub loss: LossKind,
    pub use_attention: bool,
    pub use_virtual: bool,
    pub mask: AttentionMask,
    /// Test hook: multiplies the analytic gradient of this tensor by 2.
    pub corrupt: Option<Trainable>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            dim: 16,
            heads: 2,
            batch: 4,
            num_base: 3,
            num_new: 2,
            epsilon: 1e-5,
            tau_t: 0.01,
            tau_v: 0.05,
            loss: LossKind::Cla,
            use_attention: true,
            use_virtual: true,
            mask: AttentionMask::None,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorError {
    pub tensor: String,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub epsilon: f64,
    pub tensors: Vec<TensorError>,
    pub worst_tensor: String,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Random instance where every gradient path is active: all weights are
/// dense Gaussians (including `W_O`) and the priors are uneven.
fn instance(cfg: &GradCheckConfig, seed: u64) -> Result<(ModelParams, PrototypeSet, Mat, Vec<usize>, ClassPriors)> {
    let d = cfg.dim;
    let k = cfg.num_base + cfg.num_new;
    let mut rng = Rng::from_tag(seed, "gradcheck");
    let dense = |rng: &mut Rng| Mat::from_fn(d, d, |_, _| rng.gaussian() / (d as f64).sqrt());
    let params = ModelParams {
        proj_image: dense(&mut rng),
        proj_text: dense(&mut rng),
        query: dense(&mut rng),
        key: dense(&mut rng),
        value: dense(&mut rng),
        output: dense(&mut rng),
        tau_t: cfg.tau_t,
        tau_v: cfg.tau_v,
        heads: cfg.heads,
    };
    params.validate()?;
    let mut unit = |r: usize| normalize_rows(&Mat::from_fn(r, d, |_, _| rng.gaussian()));
    let visual = unit(cfg.num_base)?;
    let textual = unit(k)?;
    let virtual_ = unit(cfg.num_new)?;
    let x = unit(cfg.batch)?;
    let protos = PrototypeSet {
        visual,
        textual,
        virtual_,
        split: ClassSplit {
            base_ids: (0..cfg.num_base).collect(),
            new_ids: (cfg.num_base..k).collect(),
        },
    };
    let y: Vec<usize> = (0..cfg.batch).map(|i| i % cfg.num_base.max(1)).collect();
    let mut counts: Vec<f64> = (0..k).map(|c| if c < cfg.num_base { (1 + 3 * (cfg.num_base - c)) as f64 } else { 1.0 }).collect();
    let total: f64 = counts.iter().sum();
    counts.iter_mut().for_each(|c| *c /= total);
    Ok((params, protos, x, y, ClassPriors { p: counts }))
}

/// Compares analytic gradients with central differences, tensor by tensor.
///
/// A tensor's error is `max |analytic − numeric| / max |numeric|`, i.e.
/// relative to the tensor's largest gradient entry.
pub fn grad_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let (mut params, mut protos, x, y, priors) = instance(cfg, seed)?;
    let train_cfg = TrainConfig {
        tau_t: cfg.tau_t,
        tau_v: cfg.tau_v,
        heads: cfg.heads,
        loss: cfg.loss,
        use_attention: cfg.use_attention,
        use_virtual: cfg.use_virtual,
        mask: cfg.mask,
        ..TrainConfig::default()
    };
    let (_, mut grads) = backward(&x, &y, &params, &protos, &priors, &train_cfg)?;
    if let Some(t) = cfg.corrupt {
        t.grad_mut(&mut grads).scale(2.0);
    }

    let eps = cfg.epsilon;
    let mut tensors = Vec::new();
    for t in Trainable::ALL {
        if !t.is_active(&train_cfg, &protos) {
            continue;
        }
        let n = t.get(&params, &protos).as_slice().len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = t.get(&params, &protos).as_slice()[i];
            t.get_mut(&mut params, &mut protos).as_mut_slice()[i] = orig + eps;
            let plus = total_loss(&x, &y, &params, &protos, &priors, &train_cfg)?.total;
            t.get_mut(&mut params, &mut protos).as_mut_slice()[i] = orig - eps;
            let minus = total_loss(&x, &y, &params, &protos, &priors, &train_cfg)?.total;
            t.get_mut(&mut params, &mut protos).as_mut_slice()[i] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        let analytic = t.grad(&grads).as_slice();
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let max_diff = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        tensors.push(TensorError {
            tensor: t.name().to_string(),
            max_relative_error: max_diff / scale,
            max_abs_gradient: scale,
        });
    }
    let worst = tensors
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
        .cloned()
        .expect("projections are always active");
    Ok(GradCheckReport {
        seed,
        epsilon: eps,
        worst_tensor: worst.tensor,
        max_relative_error: worst.max_relative_error,
        passed: worst.max_relative_error <= GRAD_TOLERANCE,
        tensors,
    })
}
