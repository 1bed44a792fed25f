use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::eval::{AblationSuite, LabelSpaceMode};
use crate::model::AttentionMask;
use crate::sampling::HeadOrder;
use crate::training::{LossKind, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "ltadapt", version, about = "Long-tailed adaptation head over frozen image-text features")]
pub struct Cli {
    /// Where to write the run manifest (defaults next to the primary output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Generate synthetic train/test image packs and a text pack.
    Synth(SynthArgs),
    /// Build a long-tailed (or few-shot) training pack from an image pack.
    Prepare(PrepareArgs),
    /// Train the head and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test pack.
    Eval(EvalArgs),
    /// Train the full and ablated variants and report their deltas.
    Ablate(AblateArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::Gradcheck(_) => "gradcheck",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    pub classes: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    /// Images per class in the train and test packs.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub per_class: u64,
    /// Test images per class (defaults to --per-class).
    #[arg(long)]
    pub test_per_class: Option<u64>,
    /// Also write a validation pack with this many images per class.
    #[arg(long)]
    pub val_per_class: Option<u64>,
    #[arg(long, default_value_t = 0.3)]
    pub text_noise: f64,
    #[arg(long, default_value_t = 0.25)]
    pub spread: f64,
    /// Draw class means from a subspace of this rank.
    #[arg(long)]
    pub latent_rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// `first-half` or a comma-separated list of base class ids.
    #[arg(long, default_value = "first-half")]
    pub split_policy: String,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// Source image pack.
    #[arg(long)]
    pub input: PathBuf,
    /// Imbalance ratio between the head and the tail base class.
    #[arg(long, default_value_t = 1.0)]
    pub imbalance: f64,
    #[arg(long, default_value_t = 100)]
    pub max_per_class: usize,
    /// Draw this many images per class instead of a long-tailed profile.
    #[arg(long, conflicts_with = "imbalance")]
    pub shots: Option<usize>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value_t = HeadOrderArg::Index)]
    pub head_order: HeadOrderArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub wd: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tau_t: f64,
    #[arg(long, conflicts_with = "tau_v_grid")]
    pub tau_v: Option<f64>,
    /// Select τ_v on validation data from the standard grid.
    #[arg(long)]
    pub tau_v_grid: bool,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Cla)]
    pub loss: LossArg,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_virtual: bool,
    #[arg(long, value_enum, default_value_t = MaskArg::None)]
    pub mask: MaskArg,
    /// Start virtual prototypes from random directions instead of the text.
    #[arg(long)]
    pub random_virtual: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl HyperArgs {
    pub fn config(&self) -> TrainConfig {
        let defaults = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            weight_decay: self.wd,
            momentum: self.momentum,
            tau_t: self.tau_t,
            tau_v: self.tau_v.unwrap_or(defaults.tau_v),
            heads: self.heads,
            loss: self.loss.into(),
            use_attention: !self.no_attention,
            use_virtual: !self.no_virtual,
            mask: self.mask.into(),
            virtual_init: if self.random_virtual {
                crate::prototypes::VirtualInit::Random
            } else {
                defaults.virtual_init
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Long-tailed training image pack.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub text: PathBuf,
    /// Validation image pack for --tau-v-grid (defaults to the training pack).
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history (JSON lines); defaults to `<out>.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test image pack (target images for the transfer protocol).
    #[arg(long)]
    pub test: PathBuf,
    /// Target text pack, required for the transfer protocol.
    #[arg(long)]
    pub target_text: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProtocolArg::B2n)]
    pub protocol: ProtocolArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Separate)]
    pub mode: ModeArg,
    /// Also report the zero-shot and visual-prototype baselines (needs --text and --train).
    #[arg(long)]
    pub baselines: bool,
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, conflicts_with = "csv")]
    pub json: bool,
    /// Print one CSV row per (dataset, seed, protocol, method).
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Ablations to run (repeatable); defaults to all.
    #[arg(long, value_enum)]
    pub suite: Vec<SuiteArg>,
    #[arg(long, value_enum, default_value_t = ModeArg::Separate)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 3)]
    pub num_base: usize,
    #[arg(long, default_value_t = 2)]
    pub num_new: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Cla)]
    pub loss: LossArg,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_virtual: bool,
    #[arg(long, value_enum, default_value_t = MaskArg::None)]
    pub mask: MaskArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale one tensor's analytic gradient to exercise the failure path.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadOrderArg {
    Index,
    Random,
}

impl From<HeadOrderArg> for HeadOrder {
    fn from(a: HeadOrderArg) -> Self {
        match a {
            HeadOrderArg::Index => HeadOrder::Index,
            HeadOrderArg::Random => HeadOrder::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Cla,
    Ce,
}

impl From<LossArg> for LossKind {
    fn from(a: LossArg) -> Self {
        match a {
            LossArg::Cla => LossKind::Cla,
            LossArg::Ce => LossKind::Ce,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskArg {
    None,
    WithinVisual,
    WithinText,
    Cross,
}

impl From<MaskArg> for AttentionMask {
    fn from(a: MaskArg) -> Self {
        match a {
            MaskArg::None => AttentionMask::None,
            MaskArg::WithinVisual => AttentionMask::MaskWithinVisual,
            MaskArg::WithinText => AttentionMask::MaskWithinText,
            MaskArg::Cross => AttentionMask::MaskCross,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolArg {
    /// Base-to-new generalization.
    B2n,
    /// Transfer to a target dataset via its text pack.
    Transfer,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Separate,
    Joint,
}

impl From<ModeArg> for LabelSpaceMode {
    fn from(a: ModeArg) -> Self {
        match a {
            ModeArg::Separate => LabelSpaceMode::Separate,
            ModeArg::Joint => LabelSpaceMode::Joint,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SuiteArg {
    NoAttention,
    NoVirtual,
    CeLoss,
    MaskWithinVisual,
    MaskWithinText,
    MaskCross,
}

impl From<SuiteArg> for AblationSuite {
    fn from(a: SuiteArg) -> Self {
        match a {
            SuiteArg::NoAttention => AblationSuite::NoAttention,
            SuiteArg::NoVirtual => AblationSuite::NoVirtual,
            SuiteArg::CeLoss => AblationSuite::CeLoss,
            SuiteArg::MaskWithinVisual => AblationSuite::MaskWithinVisual,
            SuiteArg::MaskWithinText => AblationSuite::MaskWithinText,
            SuiteArg::MaskCross => AblationSuite::MaskCross,
        }
    }
}
