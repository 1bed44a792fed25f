//! Projections, cross-modal attention, logits and prediction.

mod attention;
mod checkpoint;
pub mod head;
mod params;
mod predict;

pub use attention::{attention_backward, attention_forward, AttentionCache, AttentionGrads, AttentionMask, AttentionWeights};
pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file, CHECKPOINT_MAGIC};
pub use head::{HeadForward, HeadGrads};
pub use params::{HeadConfig, ModelParams, QKV_INIT_STD};
pub use predict::{argmax_in, cosine_predict, predict, predict_logits, visual_proto_predict, zero_shot_predict};

use crate::error::Result;
use crate::linalg::Mat;
use crate::prototypes::PrototypeSet;

/// A trained (or freshly initialized) head together with its prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub prototypes: PrototypeSet,
    pub config: HeadConfig,
    pub class_names: Vec<String>,
    /// Images scored together in one attention pass at inference.
    pub eval_batch: usize,
}

impl Model {
    pub fn forward(&self, samples: &Mat) -> Result<HeadForward> {
        head::forward(&self.params, &self.prototypes, &self.config, samples)
    }
}
