//! Loss, gradients, optimizer and the training loop.

mod config;
mod gradcheck;
mod loss;
mod objective;
mod sgd;
mod trainer;

pub use config::{LossKind, TrainConfig, TAU_V_GRID};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, TensorError, GRAD_TOLERANCE};
pub use loss::{cla_loss, cla_loss_with_grad, estimate_priors, ClassPriors};
pub use objective::{backward, total_loss, LossParts, Trainable};
pub use sgd::{sgd_step, sgd_update, SgdState};
pub use trainer::{fit, init_model, select_tau_v, train, EpochRecord, TauSelection, TrainOutcome};
