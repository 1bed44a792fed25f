//! The synthetic long-tailed base-to-new benchmark.

use serde::{Deserialize, Serialize};

use super::protocols::{base_to_new_eval, visual_proto_eval, zero_shot_eval, EvalReport, LabelSpaceMode};
use crate::error::Result;
use crate::feature_store::{FeaturePack, SynthConfig, SynthWorld};
use crate::sampling::{exp_decay_counts, split_base_new, subsample, ClassSplit, HeadOrder, SplitPolicy};
use crate::training::{fit, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Pool each class is down-sampled from.
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub max_per_class: usize,
    pub ratio: f64,
    pub text_noise: f64,
    pub spread: f64,
    pub latent_rank: Option<usize>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            num_classes: 20,
            dim: 64,
            train_per_class: 100,
            test_per_class: 50,
            max_per_class: 100,
            ratio: 50.0,
            text_noise: 0.3,
            spread: 0.25,
            latent_rank: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkData {
    /// Long-tailed base-class training images.
    pub train: FeaturePack,
    pub text: FeaturePack,
    /// Balanced test images over all classes.
    pub test: FeaturePack,
    pub split: ClassSplit,
    pub seed: u64,
}

pub fn prepare_benchmark(spec: &BenchmarkSpec, seed: u64) -> Result<BenchmarkData> {
    let world = SynthWorld::new(SynthConfig {
        num_classes: spec.num_classes,
        dim: spec.dim,
        samples_per_class: spec.train_per_class,
        text_noise: spec.text_noise,
        intra_class_spread: spec.spread,
        latent_rank: spec.latent_rank,
        seed,
    })?;
    let pool = world.image_pack("train", spec.train_per_class);
    let split = split_base_new(&pool.class_names, &SplitPolicy::FirstHalf)?;
    let profile = exp_decay_counts(split.base_ids.len(), spec.max_per_class, spec.ratio)?;
    let (train, _) = subsample(&pool, &profile, &split, HeadOrder::Index, seed)?;
    Ok(BenchmarkData {
        train,
        text: world.text_pack(),
        test: world.image_pack("test", spec.test_per_class),
        split,
        seed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BaselineComparison {
    pub trained: EvalReport,
    pub zero_shot: EvalReport,
    pub visual_prototypes: EvalReport,
}

pub fn compare_with_baselines(data: &BenchmarkData, cfg: &TrainConfig, mode: LabelSpaceMode) -> Result<BaselineComparison> {
    let outcome = fit(&data.train, &data.text, &data.split, cfg)?;
    Ok(BaselineComparison {
        trained: base_to_new_eval(&outcome.model, &data.test, mode)?,
        zero_shot: zero_shot_eval(&data.test, &data.text, &data.split, mode)?,
        visual_prototypes: visual_proto_eval(&data.test, &data.train, &data.text, &data.split, mode)?,
    })
}
