//! Adapts frozen vision-language embeddings to long-tailed classification
//! with generalization to classes that have no training images.
//!
//! The pipeline works entirely in feature space: image features and class
//! text embeddings are read from feature packs, a light head (two
//! projections, one cross-modal attention layer and learnable placeholder
//! prototypes for unseen classes) is trained with a prior-adjusted loss, and
//! the result is scored on base and new classes separately.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod feature_store;
pub mod linalg;
pub mod model;
pub mod prototypes;
pub mod rng;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
