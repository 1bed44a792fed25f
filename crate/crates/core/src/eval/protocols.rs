//! Base-to-new and transfer evaluation, plus the two training-free baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{harmonic_mean, mean_class_accuracy, per_class_accuracy};
use crate::error::{Error, Result};
use crate::feature_store::FeaturePack;
use crate::linalg::{normalize_rows, Mat};
use crate::model::{argmax_in, head, HeadConfig, Model};
use crate::prototypes::{visual_prototypes, PrototypeSet};
use crate::sampling::ClassSplit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    BaseToNew,
    Transfer,
    Single,
}

/// Which classes a test image competes among.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSpaceMode {
    /// Base images against base classes, new images against new classes.
    #[default]
    Separate,
    /// Every image against all classes.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub mode: Option<LabelSpaceMode>,
    /// Indexed by class id; `None` for classes without test samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub base_acc: Option<f64>,
    pub new_acc: Option<f64>,
    pub harmonic: Option<f64>,
    /// Mean-class accuracy over every evaluated class.
    pub accuracy: f64,
    pub method: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
}

impl EvalReport {
    /// Base and new accuracy combined (their sum).
    pub fn base_plus_new(&self) -> f64 {
        self.base_acc.unwrap_or(0.0) + self.new_acc.unwrap_or(0.0)
    }
}

fn config_echo(model: &Model) -> serde_json::Value {
    serde_json::json!({
        "dim": model.params.dim(),
        "heads": model.params.heads,
        "tau_t": model.params.tau_t,
        "tau_v": model.params.tau_v,
        "use_attention": model.config.use_attention,
        "use_virtual": model.config.use_virtual,
        "mask": model.config.mask,
        "eval_batch": model.eval_batch,
    })
}

fn check_pack(model: &Model, pack: &FeaturePack) -> Result<()> {
    if pack.dim != model.params.dim() {
        return Err(Error::format(
            0,
            format!("pack dim {} != model dim {}", pack.dim, model.params.dim()),
        ));
    }
    if pack.class_names != model.class_names {
        return Err(Error::validation("class_names", "test pack classes differ from the model's"));
    }
    Ok(())
}

/// Logits for every row of `pack`, scoring `eval_batch` unit-normalized
/// images per pass.
fn chunked_logits(
    pack: &FeaturePack,
    eval_batch: usize,
    score: impl Fn(&Mat) -> Result<Mat> + Sync,
) -> Result<Mat> {
    let idx: Vec<usize> = (0..pack.count()).collect();
    let parts = idx
        .par_chunks(eval_batch.max(1))
        .map(|chunk| score(&normalize_rows(&pack.rows_mat(chunk))?))
        .collect::<Result<Vec<Mat>>>()?;
    let refs: Vec<&Mat> = parts.iter().collect();
    Ok(Mat::vstack(&refs))
}

/// Scores `logits` under the split and label-space policy.
fn split_report(
    logits: &Mat,
    labels: &[usize],
    split: &ClassSplit,
    mode: LabelSpaceMode,
    method: &str,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let k = split.num_classes();
    let all: Vec<usize> = (0..k).collect();
    let preds: Vec<usize> = (0..logits.rows())
        .map(|i| {
            let y = labels[i];
            let space = match mode {
                LabelSpaceMode::Joint => &all,
                LabelSpaceMode::Separate if split.is_base(y) => &split.base_ids,
                LabelSpaceMode::Separate => &split.new_ids,
            };
            argmax_in(logits.row(i), space).unwrap_or(usize::MAX)
        })
        .collect();
    let present: Vec<bool> = {
        let mut p = vec![false; k];
        labels.iter().for_each(|&y| p[y] = true);
        p
    };
    let mut per_class = vec![None; k];
    let mut group = |ids: &[usize]| -> Result<Option<f64>> {
        if ids.is_empty() {
            return Ok(None);
        }
        if let Some(&c) = ids.iter().find(|&&c| !present[c]) {
            return Err(Error::Protocol(format!("class {c} has no test samples")));
        }
        let acc = per_class_accuracy(&preds, labels, ids)?;
        for (&c, &a) in ids.iter().zip(&acc) {
            per_class[c] = Some(a);
        }
        Ok(Some(acc.iter().sum::<f64>() / acc.len() as f64))
    };
    let base_acc = group(&split.base_ids)?;
    let new_acc = group(&split.new_ids)?;
    let harmonic = match (base_acc, new_acc) {
        (Some(b), Some(n)) => Some(harmonic_mean(b, n)),
        _ => None,
    };
    let evaluated: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(EvalReport {
        protocol: Protocol::BaseToNew,
        mode: Some(mode),
        accuracy: evaluated.iter().sum::<f64>() / evaluated.len().max(1) as f64,
        per_class_accuracy: per_class,
        base_acc,
        new_acc,
        harmonic,
        method: method.to_string(),
        config,
        seed: None,
    })
}

fn labels_of(pack: &FeaturePack) -> Vec<usize> {
    pack.labels.iter().map(|&l| l as usize).collect()
}

/// Base-to-new generalization of a trained head on `test`.
pub fn base_to_new_eval(model: &Model, test: &FeaturePack, mode: LabelSpaceMode) -> Result<EvalReport> {
    check_pack(model, test)?;
    let split = &model.prototypes.split;
    if split.base_ids.is_empty() || split.new_ids.is_empty() {
        return Err(Error::Protocol("base-to-new evaluation needs base and new classes".into()));
    }
    let logits = chunked_logits(test, model.eval_batch, |x| Ok(model.forward(x)?.aggregate()))?;
    split_report(&logits, &labels_of(test), split, mode, "trained", config_echo(model))
}

/// Mean-class accuracy on whatever classes `pack` contains, with separate
/// label spaces. Used to pick hyperparameters on a validation pack.
pub fn score_pack(model: &Model, pack: &FeaturePack) -> Result<f64> {
    check_pack(model, pack)?;
    let logits = chunked_logits(pack, model.eval_batch, |x| Ok(model.forward(x)?.aggregate()))?;
    let labels = labels_of(pack);
    let split = &model.prototypes.split;
    let preds: Vec<usize> = (0..logits.rows())
        .map(|i| {
            let space = if split.is_base(labels[i]) { &split.base_ids } else { &split.new_ids };
            argmax_in(logits.row(i), space).unwrap_or(usize::MAX)
        })
        .collect();
    let hist = pack.histogram();
    let present: Vec<usize> = (0..pack.num_classes()).filter(|&c| hist[c] > 0).collect();
    mean_class_accuracy(&preds, &labels, &present)
}

/// Scores target images against target class texts using only the trained
/// projections and attention; no visual or virtual prototypes take part.
pub fn transfer_eval(model: &Model, target_text: &FeaturePack, target_images: &FeaturePack) -> Result<EvalReport> {
    let d = model.params.dim();
    if target_text.dim != d || target_images.dim != d {
        return Err(Error::format(
            0,
            format!(
                "dimension mismatch: model {d}, target text {}, target images {}",
                target_text.dim, target_images.dim
            ),
        ));
    }
    if target_text.class_names != target_images.class_names {
        return Err(Error::validation("class_names", "target text and image packs list different classes"));
    }
    let k = target_text.num_classes();
    let protos = PrototypeSet {
        visual: Mat::zeros(0, d),
        textual: normalize_rows(&target_text.to_mat())?,
        virtual_: Mat::zeros(0, d),
        split: ClassSplit {
            base_ids: Vec::new(),
            new_ids: (0..k).collect(),
        },
    };
    let cfg = HeadConfig {
        use_virtual: false,
        ..model.config
    };
    let logits = chunked_logits(target_images, model.eval_batch, |x| {
        Ok(head::forward(&model.params, &protos, &cfg, x)?.z_t().clone())
    })?;
    let labels = labels_of(target_images);
    let all: Vec<usize> = (0..k).collect();
    let preds: Vec<usize> = (0..logits.rows())
        .map(|i| argmax_in(logits.row(i), &all).unwrap_or(usize::MAX))
        .collect();
    let acc = per_class_accuracy(&preds, &labels, &all)?;
    Ok(EvalReport {
        protocol: Protocol::Transfer,
        mode: None,
        accuracy: acc.iter().sum::<f64>() / k as f64,
        per_class_accuracy: acc.into_iter().map(Some).collect(),
        base_acc: None,
        new_acc: None,
        harmonic: None,
        method: "trained".into(),
        config: config_echo(model),
        seed: None,
    })
}

fn cosine_report(test: &FeaturePack, protos: &Mat, split: &ClassSplit, mode: LabelSpaceMode, method: &str) -> Result<EvalReport> {
    if protos.cols() != test.dim {
        return Err(Error::format(0, format!("prototype dim {} != pack dim {}", protos.cols(), test.dim)));
    }
    let x = normalize_rows(&test.to_mat())?;
    let p = normalize_rows(protos)?;
    let sims = x.matmul_nt(&p);
    split_report(&sims, &labels_of(test), split, mode, method, serde_json::json!({}))
}

/// Image-text matching against the raw textual prototypes.
pub fn zero_shot_eval(test: &FeaturePack, text: &FeaturePack, split: &ClassSplit, mode: LabelSpaceMode) -> Result<EvalReport> {
    cosine_report(test, &text.to_mat(), split, mode, "zero_shot")
}

/// Image-image matching against visual prototypes of the base classes; new
/// classes fall back to their textual prototypes.
pub fn visual_proto_eval(
    test: &FeaturePack,
    train: &FeaturePack,
    text: &FeaturePack,
    split: &ClassSplit,
    mode: LabelSpaceMode,
) -> Result<EvalReport> {
    let visual = visual_prototypes(train, split)?;
    let mut protos = normalize_rows(&text.to_mat())?;
    for (b, &c) in split.base_ids.iter().enumerate() {
        protos.row_mut(c).copy_from_slice(visual.row(b));
    }
    cosine_report(test, &protos, split, mode, "visual_prototypes")
}
