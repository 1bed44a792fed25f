//! Visual, textual and virtual class prototypes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeaturePack;
use crate::linalg::{norm, normalize_rows, Mat};
use crate::rng::Rng;
use crate::sampling::ClassSplit;

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    /// `K_b × D`, row b belongs to `split.base_ids[b]`. Frozen.
    pub visual: Mat,
    /// `K × D`, row c belongs to class c. Frozen.
    pub textual: Mat,
    /// `K_n × D`, row j belongs to `split.new_ids[j]`. Trainable.
    pub virtual_: Mat,
    pub split: ClassSplit,
}

impl PrototypeSet {
    pub fn dim(&self) -> usize {
        self.textual.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.textual.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        self.split.validate(self.num_classes())?;
        if self.visual.shape() != (self.split.base_ids.len(), d) {
            return Err(Error::validation("visual", "one row per base class expected"));
        }
        if self.virtual_.shape() != (self.split.new_ids.len(), d) {
            return Err(Error::validation("virtual", "one row per new class expected"));
        }
        Ok(())
    }
}

/// How the virtual prototypes start out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum VirtualInit {
    /// Textual prototype of the class plus Gaussian jitter.
    Text { jitter: f64 },
    /// Isotropic Gaussian direction, ignoring the text.
    Random,
}

impl Default for VirtualInit {
    fn default() -> Self {
        VirtualInit::Text { jitter: 0.01 }
    }
}

/// Row b is the normalized mean of the training features of `base_ids[b]`.
pub fn visual_prototypes(train: &FeaturePack, split: &ClassSplit) -> Result<Mat> {
    let d = train.dim;
    let mut sums = Mat::zeros(split.base_ids.len(), d);
    let mut counts = vec![0usize; split.base_ids.len()];
    let mut slot = vec![None; train.num_classes()];
    for (b, &c) in split.base_ids.iter().enumerate() {
        if c < slot.len() {
            slot[c] = Some(b);
        }
    }
    for i in 0..train.count() {
        if let Some(b) = slot[train.labels[i] as usize] {
            counts[b] += 1;
            for (s, &v) in sums.row_mut(b).iter_mut().zip(train.row(i)) {
                *s += f64::from(v);
            }
        }
    }
    for (b, &n) in counts.iter().enumerate() {
        if n == 0 {
            let class = split.base_ids[b];
            return Err(Error::Coverage {
                class,
                name: train.class_names.get(class).cloned().unwrap_or_default(),
            });
        }
        let row = sums.row_mut(b);
        let scale = 1.0 / n as f64;
        for v in row.iter_mut() {
            *v *= scale;
        }
        let len = norm(row);
        if !(len > 0.0) {
            return Err(Error::Degenerate { row: b, norm: len });
        }
        for v in row.iter_mut() {
            *v /= len;
        }
    }
    Ok(sums)
}

/// `normalize(T[new_ids[j]] + N(0, σ²I))` for each new class.
pub fn init_virtual(textual: &Mat, new_ids: &[usize], init: VirtualInit, seed: u64) -> Result<Mat> {
    let d = textual.cols();
    let mut rng = Rng::from_tag(seed, "prototypes/virtual");
    let mut out = Mat::zeros(new_ids.len(), d);
    for (j, &c) in new_ids.iter().enumerate() {
        let row = out.row_mut(j);
        match init {
            VirtualInit::Text { jitter } => {
                if !(jitter >= 0.0) {
                    return Err(Error::Parameter(format!("jitter must be >= 0, got {jitter}")));
                }
                row.copy_from_slice(textual.row(c));
                if jitter > 0.0 {
                    for v in row.iter_mut() {
                        *v += jitter * rng.gaussian();
                    }
                }
            }
            VirtualInit::Random => {
                for v in row.iter_mut() {
                    *v = rng.gaussian();
                }
            }
        }
    }
    if let VirtualInit::Text { jitter } = init {
        if jitter == 0.0 {
            return Ok(out);
        }
    }
    normalize_rows(&out)
}

/// Assembles the prototype set for a training pack and its text pack.
pub fn build_prototypes(
    train: &FeaturePack,
    text: &FeaturePack,
    split: &ClassSplit,
    init: VirtualInit,
    seed: u64,
) -> Result<PrototypeSet> {
    if train.dim != text.dim {
        return Err(Error::format(
            0,
            format!("image dim {} != text dim {}", train.dim, text.dim),
        ));
    }
    if train.class_names != text.class_names {
        return Err(Error::validation("class_names", "image and text packs list different classes"));
    }
    let textual = normalize_rows(&text.to_mat())?;
    let set = PrototypeSet {
        visual: visual_prototypes(train, split)?,
        virtual_: init_virtual(&textual, &split.new_ids, init, seed)?,
        textual,
        split: split.clone(),
    };
    set.validate()?;
    Ok(set)
}
