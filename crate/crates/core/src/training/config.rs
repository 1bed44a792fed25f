use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionMask, HeadConfig};
use crate::prototypes::VirtualInit;

/// Candidate image-image temperatures for grid selection.
pub const TAU_V_GRID: [f64; 5] = [0.005, 0.01, 0.02, 0.05, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Logit-adjusted by class priors.
    Cla,
    /// Plain cross-entropy (uniform priors).
    Ce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub tau_t: f64,
    pub tau_v: f64,
    pub heads: usize,
    pub loss: LossKind,
    pub use_attention: bool,
    pub use_virtual: bool,
    pub mask: AttentionMask,
    pub virtual_init: VirtualInit,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 3e-4,
            weight_decay: 5e-4,
            momentum: 0.9,
            tau_t: 0.01,
            tau_v: 0.01,
            heads: 4,
            loss: LossKind::Cla,
            use_attention: true,
            use_virtual: true,
            mask: AttentionMask::None,
            virtual_init: VirtualInit::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn head(&self) -> HeadConfig {
        HeadConfig {
            use_attention: self.use_attention,
            use_virtual: self.use_virtual,
            mask: self.mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("tau_t", self.tau_t),
            ("tau_v", self.tau_v),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("weight_decay", self.weight_decay), ("momentum", self.momentum)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if self.heads == 0 {
            return Err(Error::Parameter("heads must be at least 1".into()));
        }
        Ok(())
    }
}
