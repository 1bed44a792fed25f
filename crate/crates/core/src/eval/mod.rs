//! Metrics, evaluation protocols, baselines and ablations.

mod ablation;
mod benchmark;
mod metrics;
mod protocols;

pub use ablation::{run_ablation, AblationReport, AblationSuite};
pub use benchmark::{compare_with_baselines, prepare_benchmark, BaselineComparison, BenchmarkData, BenchmarkSpec};
pub use metrics::{harmonic_mean, mean_class_accuracy, per_class_accuracy};
pub use protocols::{
    base_to_new_eval, score_pack, transfer_eval, visual_proto_eval, zero_shot_eval, EvalReport, LabelSpaceMode, Protocol,
};
