//! Paired full-vs-ablated runs with shared seeds.

use serde::{Deserialize, Serialize};

use super::protocols::{base_to_new_eval, EvalReport, LabelSpaceMode};
use crate::error::Result;
use crate::feature_store::FeaturePack;
use crate::model::AttentionMask;
use crate::sampling::ClassSplit;
use crate::training::{fit, LossKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    NoAttention,
    NoVirtual,
    CeLoss,
    MaskWithinVisual,
    MaskWithinText,
    MaskCross,
}

impl AblationSuite {
    pub const ALL: [AblationSuite; 6] = [
        AblationSuite::NoAttention,
        AblationSuite::NoVirtual,
        AblationSuite::CeLoss,
        AblationSuite::MaskWithinVisual,
        AblationSuite::MaskWithinText,
        AblationSuite::MaskCross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationSuite::NoAttention => "no_attention",
            AblationSuite::NoVirtual => "no_virtual",
            AblationSuite::CeLoss => "ce_loss",
            AblationSuite::MaskWithinVisual => "mask_within_visual",
            AblationSuite::MaskWithinText => "mask_within_text",
            AblationSuite::MaskCross => "mask_cross",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AblationSuite::ALL.into_iter().find(|a| a.name() == s)
    }

    /// The configuration with this component removed.
    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        match self {
            AblationSuite::NoAttention => out.use_attention = false,
            AblationSuite::NoVirtual => out.use_virtual = false,
            AblationSuite::CeLoss => out.loss = LossKind::Ce,
            AblationSuite::MaskWithinVisual => out.mask = AttentionMask::MaskWithinVisual,
            AblationSuite::MaskWithinText => out.mask = AttentionMask::MaskWithinText,
            AblationSuite::MaskCross => out.mask = AttentionMask::MaskCross,
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: AblationSuite,
    pub full: EvalReport,
    pub ablated: EvalReport,
    /// Ablated minus full.
    pub delta_base: f64,
    pub delta_new: f64,
    pub delta_harmonic: f64,
}

impl AblationReport {
    pub fn from_pair(suite: AblationSuite, full: EvalReport, ablated: EvalReport) -> Self {
        let d = |f: fn(&EvalReport) -> Option<f64>| f(&ablated).unwrap_or(0.0) - f(&full).unwrap_or(0.0);
        AblationReport {
            suite,
            delta_base: d(|r| r.base_acc),
            delta_new: d(|r| r.new_acc),
            delta_harmonic: d(|r| r.harmonic),
            full,
            ablated,
        }
    }
}

/// Trains and evaluates the full head and the ablated head on the same data
/// with the same seed.
pub fn run_ablation(
    suite: AblationSuite,
    train: &FeaturePack,
    text: &FeaturePack,
    test: &FeaturePack,
    split: &ClassSplit,
    cfg: &TrainConfig,
    mode: LabelSpaceMode,
) -> Result<AblationReport> {
    let evaluate = |c: &TrainConfig| -> Result<EvalReport> {
        let outcome = fit(train, text, split, c)?;
        let mut report = base_to_new_eval(&outcome.model, test, mode)?;
        report.seed = Some(c.seed);
        Ok(report)
    };
    let full = evaluate(cfg)?;
    let ablated = evaluate(&suite.apply(cfg))?;
    Ok(AblationReport::from_pair(suite, full, ablated))
}
