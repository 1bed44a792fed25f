use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::{estimate_priors, ClassPriors};
use super::objective::{backward, LossParts};
use super::sgd::{sgd_step, SgdState};
use crate::error::{Error, Result};
use crate::eval::score_pack;
use crate::feature_store::FeaturePack;
use crate::linalg::normalize_rows;
use crate::model::{Model, ModelParams};
use crate::prototypes::{build_prototypes, PrototypeSet};
use crate::rng::Rng;
use crate::sampling::ClassSplit;

/// One line of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossParts,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Fresh head around `protos`, before any update.
pub fn init_model(protos: PrototypeSet, class_names: Vec<String>, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    let params = ModelParams::init(protos.dim(), cfg.heads, cfg.tau_t, cfg.tau_v, cfg.seed)?;
    Ok(Model {
        params,
        prototypes: protos,
        config: cfg.head(),
        class_names,
        eval_batch: cfg.batch_size,
    })
}

/// Mini-batch SGD over `train` (base-class images, global labels).
pub fn train(train: &FeaturePack, protos: PrototypeSet, priors: &ClassPriors, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = init_model(protos, train.class_names.clone(), cfg)?;
    if train.dim != model.params.dim() {
        return Err(Error::format(0, format!("train dim {} != model dim {}", train.dim, model.params.dim())));
    }
    let Model {
        params, prototypes, ..
    } = &mut model;
    let mut state = SgdState::new(params, prototypes);
    let mut order: Vec<usize> = (0..train.count()).collect();
    let mut rng = Rng::from_tag(cfg.seed, "train/shuffle");
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = LossParts::default();
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = normalize_rows(&train.rows_mat(idx))?;
            let y: Vec<usize> = idx.iter().map(|&i| train.labels[i] as usize).collect();
            let (parts, grads) = backward(&x, &y, params, prototypes, priors, cfg)
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("epoch {epoch} batch {b}: {m}")),
                    other => other,
                })?;
            if !parts.total.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch} batch {b}")));
            }
            sgd_step(params, prototypes, &grads, cfg, &mut state);
            sum.z_p += parts.z_p;
            sum.z_v += parts.z_v;
            sum.z_t += parts.z_t;
            sum.total += parts.total;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            loss: LossParts {
                z_p: sum.z_p / n,
                z_v: sum.z_v / n,
                z_t: sum.z_t / n,
                total: sum.total / n,
            },
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Builds prototypes and priors from the packs, then trains.
pub fn fit(train_pack: &FeaturePack, text: &FeaturePack, split: &ClassSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let protos = build_prototypes(train_pack, text, split, cfg.virtual_init, cfg.seed)?;
    let priors = estimate_priors(&train_pack.histogram(), split)?;
    train(train_pack, protos, &priors, cfg)
}

#[derive(Clone, Debug, Serialize)]
pub struct TauSelection {
    pub chosen: f64,
    /// `(τ_v, validation score)` for every candidate, in grid order.
    pub scores: Vec<(f64, f64)>,
    #[serde(skip)]
    pub outcome: TrainOutcome,
}

/// Trains once per candidate τ_v and keeps the best validation score;
/// ties go to the smaller τ_v.
pub fn select_tau_v(
    train_pack: &FeaturePack,
    text: &FeaturePack,
    split: &ClassSplit,
    cfg: &TrainConfig,
    validation: &FeaturePack,
    grid: &[f64],
) -> Result<TauSelection> {
    let mut candidates: Vec<f64> = grid.to_vec();
    candidates.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64, TrainOutcome)> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    for &tau_v in &candidates {
        let outcome = fit(train_pack, text, split, &TrainConfig { tau_v, ..cfg.clone() })?;
        let score = score_pack(&outcome.model, validation)?;
        scores.push((tau_v, score));
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((tau_v, score, outcome));
        }
    }
    let (chosen, _, outcome) = best.ok_or_else(|| Error::Parameter("empty τ_v grid".into()))?;
    Ok(TauSelection {
        chosen,
        scores,
        outcome,
    })
}
