//! Synthetic stand-in for CLIP feature geometry.
//!
//! Each class has a unit-norm mean direction. Image samples scatter around
//! the mean with isotropic Gaussian noise; the class's text prototype is the
//! mean perturbed once by `text_noise`, so a large `text_noise` models class
//! names that describe the images poorly. With `latent_rank` set, class
//! means live in a random low-dimensional subspace while the noise stays
//! full-rank.

use serde::{Deserialize, Serialize};

use super::pack::{FeaturePack, PackKind};
use crate::error::{Error, Result};
use crate::linalg::{norm, Mat};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub text_noise: f64,
    pub intra_class_spread: f64,
    /// Rank of the subspace spanned by class means; `None` for full rank.
    pub latent_rank: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 20,
            dim: 64,
            samples_per_class: 100,
            text_noise: 0.3,
            intra_class_spread: 0.25,
            latent_rank: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Parameter("synthetic data needs at least 2 classes".into()));
        }
        if self.dim < 2 {
            return Err(Error::Parameter("synthetic data needs dim >= 2".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Parameter("samples_per_class must be positive".into()));
        }
        if !(self.text_noise >= 0.0) || !self.text_noise.is_finite() {
            return Err(Error::Parameter("text_noise must be a finite value >= 0".into()));
        }
        if !(self.intra_class_spread > 0.0) || !self.intra_class_spread.is_finite() {
            return Err(Error::Parameter("intra_class_spread must be a finite value > 0".into()));
        }
        if let Some(r) = self.latent_rank {
            if r == 0 || r > self.dim {
                return Err(Error::Parameter(format!(
                    "latent_rank must lie in [1, {}], got {r}",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|c| format!("class_{c:03}")).collect()
    }
}

fn gaussian_vec(rng: &mut Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.gaussian()).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    for x in &mut v {
        *x /= n;
    }
    v
}

/// Class geometry shared by every split drawn from one configuration.
#[derive(Clone, Debug)]
pub struct SynthWorld {
    pub config: SynthConfig,
    /// Unit-norm class means, `K × D`.
    pub means: Mat,
    /// Unit-norm text prototypes, `K × D`.
    pub text: Mat,
}

impl SynthWorld {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let (k, d) = (config.num_classes, config.dim);

        let mut rng = Rng::from_tag(config.seed, "synth/means");
        let basis: Option<Vec<Vec<f64>>> = config
            .latent_rank
            .map(|r| (0..r).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect());
        let mut mean_rows = Vec::with_capacity(k);
        for _ in 0..k {
            let raw = match &basis {
                None => gaussian_vec(&mut rng, d, 1.0),
                Some(b) => {
                    let mut v = vec![0.0; d];
                    for dir in b {
                        let c = rng.gaussian();
                        for (x, bv) in v.iter_mut().zip(dir) {
                            *x += c * bv;
                        }
                    }
                    v
                }
            };
            mean_rows.push(normalized(raw));
        }

        let mut rng = Rng::from_tag(config.seed, "synth/text");
        let text_rows: Vec<Vec<f64>> = mean_rows
            .iter()
            .map(|m| {
                if config.text_noise == 0.0 {
                    m.clone()
                } else {
                    let noise = gaussian_vec(&mut rng, d, config.text_noise);
                    normalized(m.iter().zip(&noise).map(|(a, b)| a + b).collect())
                }
            })
            .collect();

        Ok(SynthWorld {
            means: Mat::from_rows(&mean_rows),
            text: Mat::from_rows(&text_rows),
            config,
        })
    }

    fn dataset_name(&self) -> String {
        format!("synth-k{}-d{}", self.config.num_classes, self.config.dim)
    }

    /// Draws `per_class` image features for every class, class-major order.
    pub fn image_pack(&self, split: &str, per_class: usize) -> FeaturePack {
        let cfg = &self.config;
        let mut rng = Rng::from_tag(cfg.seed, &format!("synth/images/{split}"));
        let mut features = Vec::with_capacity(cfg.num_classes * per_class * cfg.dim);
        let mut labels = Vec::with_capacity(cfg.num_classes * per_class);
        for c in 0..cfg.num_classes {
            let mean = self.means.row(c);
            for _ in 0..per_class {
                let sample: Vec<f64> = mean
                    .iter()
                    .map(|m| m + cfg.intra_class_spread * rng.gaussian())
                    .collect();
                features.extend(normalized(sample).into_iter().map(|v| v as f32));
                labels.push(c as u32);
            }
        }
        FeaturePack {
            dataset: self.dataset_name(),
            split: split.to_string(),
            kind: PackKind::Image,
            dim: cfg.dim,
            class_names: cfg.class_names(),
            features,
            labels,
            normalized: true,
            seed: Some(cfg.seed),
        }
    }

    pub fn text_pack(&self) -> FeaturePack {
        let cfg = &self.config;
        FeaturePack {
            dataset: self.dataset_name(),
            split: "text".into(),
            kind: PackKind::Text,
            dim: cfg.dim,
            class_names: cfg.class_names(),
            features: self.text.as_slice().iter().map(|&v| v as f32).collect(),
            labels: (0..cfg.num_classes as u32).collect(),
            normalized: true,
            seed: Some(cfg.seed),
        }
    }
}

/// Generates a training image pack and the matching text pack.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(FeaturePack, FeaturePack)> {
    let world = SynthWorld::new(cfg.clone())?;
    Ok((world.image_pack("train", cfg.samples_per_class), world.text_pack()))
}
