use serde::{Deserialize, Serialize};

use super::attention::{AttentionMask, AttentionWeights};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::Rng;

/// Trainable weights of the head plus its fixed temperatures.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Visual-modality projection `P_I`, `D × D`.
    pub proj_image: Mat,
    /// Textual-modality projection `P_T`, `D × D`.
    pub proj_text: Mat,
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
    pub output: Mat,
    /// Image-text temperature.
    pub tau_t: f64,
    /// Image-image temperature.
    pub tau_v: f64,
    pub heads: usize,
}

/// Standard deviation of the query/key/value initialization.
pub const QKV_INIT_STD: f64 = 0.02;

impl ModelParams {
    /// Identity projections, small Gaussian Q/K/V and a zero output
    /// projection, so the untrained head is exactly the projected-prototype
    /// matcher.
    pub fn init(dim: usize, heads: usize, tau_t: f64, tau_v: f64, seed: u64) -> Result<Self> {
        let mut rng = Rng::from_tag(seed, "model/init");
        let gauss = |rng: &mut Rng| Mat::from_fn(dim, dim, |_, _| QKV_INIT_STD * rng.gaussian());
        let params = ModelParams {
            proj_image: Mat::identity(dim),
            proj_text: Mat::identity(dim),
            query: gauss(&mut rng),
            key: gauss(&mut rng),
            value: gauss(&mut rng),
            output: Mat::zeros(dim, dim),
            tau_t,
            tau_v,
            heads,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.proj_image.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Parameter("model dim must be positive".into()));
        }
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Parameter(format!(
                "dim {d} is not divisible by {} heads",
                self.heads
            )));
        }
        if !(self.tau_t > 0.0) || !(self.tau_v > 0.0) {
            return Err(Error::Parameter("temperatures must be positive".into()));
        }
        for (name, m) in self.tensors() {
            if m.shape() != (d, d) {
                return Err(Error::Parameter(format!("{name} must be {d}×{d}")));
            }
        }
        Ok(())
    }

    pub fn attention(&self) -> AttentionWeights<'_> {
        AttentionWeights {
            query: &self.query,
            key: &self.key,
            value: &self.value,
            output: &self.output,
            heads: self.heads,
        }
    }

    /// The six weight matrices in checkpoint order.
    pub fn tensors(&self) -> [(&'static str, &Mat); 6] {
        [
            ("proj_image", &self.proj_image),
            ("proj_text", &self.proj_text),
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("output", &self.output),
        ]
    }
}

/// Switches that select the head's architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub use_attention: bool,
    pub use_virtual: bool,
    pub mask: AttentionMask,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            use_attention: true,
            use_virtual: true,
            mask: AttentionMask::None,
        }
    }
}
