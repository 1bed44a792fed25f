//! The summed objective `L_cla(z_P) + L_cla(z_V) + L_cla(z_T)` and its
//! exact gradients.
//!
//! Every mini-batch is augmented with all virtual prototypes, normalized
//! like image features and labelled with their new classes.

use serde::{Deserialize, Serialize};

use super::config::{LossKind, TrainConfig};
use super::loss::{cla_loss_with_grad, ClassPriors};
use crate::error::{Error, Result};
use crate::linalg::{Mat, RowNormalized};
use crate::model::head::{self, HeadGrads};
use crate::model::ModelParams;
use crate::prototypes::PrototypeSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    #[serde(rename = "loss_zP")]
    pub z_p: f64,
    #[serde(rename = "loss_zV")]
    pub z_v: f64,
    #[serde(rename = "loss_zT")]
    pub z_t: f64,
    pub total: f64,
}

/// Trainable tensors, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    ProjImage,
    ProjText,
    Query,
    Key,
    Value,
    Output,
    Virtual,
}

impl Trainable {
    pub const ALL: [Trainable; 7] = [
        Trainable::ProjImage,
        Trainable::ProjText,
        Trainable::Query,
        Trainable::Key,
        Trainable::Value,
        Trainable::Output,
        Trainable::Virtual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Trainable::ProjImage => "proj_image",
            Trainable::ProjText => "proj_text",
            Trainable::Query => "query",
            Trainable::Key => "key",
            Trainable::Value => "value",
            Trainable::Output => "output",
            Trainable::Virtual => "virtual",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Trainable::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Whether the tensor takes part in training under `cfg`.
    pub fn is_active(self, cfg: &TrainConfig, protos: &PrototypeSet) -> bool {
        match self {
            Trainable::ProjImage | Trainable::ProjText => true,
            Trainable::Query | Trainable::Key | Trainable::Value | Trainable::Output => cfg.use_attention,
            Trainable::Virtual => cfg.use_virtual && protos.virtual_.rows() > 0,
        }
    }

    pub fn get<'a>(self, params: &'a ModelParams, protos: &'a PrototypeSet) -> &'a Mat {
        match self {
            Trainable::ProjImage => &params.proj_image,
            Trainable::ProjText => &params.proj_text,
            Trainable::Query => &params.query,
            Trainable::Key => &params.key,
            Trainable::Value => &params.value,
            Trainable::Output => &params.output,
            Trainable::Virtual => &protos.virtual_,
        }
    }

    pub fn get_mut<'a>(self, params: &'a mut ModelParams, protos: &'a mut PrototypeSet) -> &'a mut Mat {
        match self {
            Trainable::ProjImage => &mut params.proj_image,
            Trainable::ProjText => &mut params.proj_text,
            Trainable::Query => &mut params.query,
            Trainable::Key => &mut params.key,
            Trainable::Value => &mut params.value,
            Trainable::Output => &mut params.output,
            Trainable::Virtual => &mut protos.virtual_,
        }
    }

    pub fn grad(self, g: &HeadGrads) -> &Mat {
        match self {
            Trainable::ProjImage => &g.proj_image,
            Trainable::ProjText => &g.proj_text,
            Trainable::Query => &g.query,
            Trainable::Key => &g.key,
            Trainable::Value => &g.value,
            Trainable::Output => &g.output,
            Trainable::Virtual => &g.virtual_,
        }
    }

    pub fn grad_mut(self, g: &mut HeadGrads) -> &mut Mat {
        match self {
            Trainable::ProjImage => &mut g.proj_image,
            Trainable::ProjText => &mut g.proj_text,
            Trainable::Query => &mut g.query,
            Trainable::Key => &mut g.key,
            Trainable::Value => &mut g.value,
            Trainable::Output => &mut g.output,
            Trainable::Virtual => &mut g.virtual_,
        }
    }
}

fn log_priors(priors: &ClassPriors, cfg: &TrainConfig) -> Vec<f64> {
    match cfg.loss {
        LossKind::Cla => priors.log(),
        LossKind::Ce => vec![0.0; priors.p.len()],
    }
}

struct Augmented {
    samples: Mat,
    labels: Vec<usize>,
    virtual_norm: Option<RowNormalized>,
}

fn augment(x: &Mat, y: &[usize], protos: &PrototypeSet, cfg: &TrainConfig) -> Result<Augmented> {
    if x.rows() != y.len() {
        return Err(Error::Parameter(format!("{} labels for {} samples", y.len(), x.rows())));
    }
    let mut labels = y.to_vec();
    if cfg.use_virtual && protos.virtual_.rows() > 0 {
        let vn = RowNormalized::forward(&protos.virtual_)?;
        labels.extend_from_slice(&protos.split.new_ids);
        Ok(Augmented {
            samples: Mat::vstack(&[x, &vn.out]),
            labels,
            virtual_norm: Some(vn),
        })
    } else {
        if x.rows() == 0 {
            return Err(Error::Parameter("empty batch".into()));
        }
        Ok(Augmented {
            samples: x.clone(),
            labels,
            virtual_norm: None,
        })
    }
}

fn check_priors(priors: &ClassPriors, protos: &PrototypeSet) -> Result<()> {
    if priors.p.len() != protos.num_classes() || priors.p.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Parameter("priors must be positive for every class".into()));
    }
    Ok(())
}

/// Objective on one mini-batch `(x, y)`.
pub fn total_loss(
    x: &Mat,
    y: &[usize],
    params: &ModelParams,
    protos: &PrototypeSet,
    priors: &ClassPriors,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    check_priors(priors, protos)?;
    let aug = augment(x, y, protos, cfg)?;
    let fwd = head::forward(params, protos, &cfg.head(), &aug.samples)?;
    let lp = log_priors(priors, cfg);
    let z_p = cla_loss_with_grad(fwd.z_p(), &aug.labels, &lp)?.0;
    let z_v = cla_loss_with_grad(fwd.z_v(), &aug.labels, &lp)?.0;
    let z_t = cla_loss_with_grad(fwd.z_t(), &aug.labels, &lp)?.0;
    Ok(LossParts {
        z_p,
        z_v,
        z_t,
        total: z_p + z_v + z_t,
    })
}

/// Objective and gradients for every trainable tensor. Tensors that are
/// inactive under `cfg` get zero gradients.
pub fn backward(
    x: &Mat,
    y: &[usize],
    params: &ModelParams,
    protos: &PrototypeSet,
    priors: &ClassPriors,
    cfg: &TrainConfig,
) -> Result<(LossParts, HeadGrads)> {
    check_priors(priors, protos)?;
    let aug = augment(x, y, protos, cfg)?;
    let fwd = head::forward(params, protos, &cfg.head(), &aug.samples)?;
    let lp = log_priors(priors, cfg);
    let (z_p, d_zp) = cla_loss_with_grad(fwd.z_p(), &aug.labels, &lp)?;
    let (z_v, d_zv) = cla_loss_with_grad(fwd.z_v(), &aug.labels, &lp)?;
    let (z_t, d_zt) = cla_loss_with_grad(fwd.z_t(), &aug.labels, &lp)?;
    let mut grads = head::backward(&fwd, params, protos, &d_zp, &d_zv, &d_zt);

    if let Some(vn) = &aug.virtual_norm {
        let d_samples = grads.samples.slice_rows(x.rows(), aug.samples.rows());
        grads.virtual_.add_assign(&vn.backward(&d_samples));
    }
    for t in Trainable::ALL {
        let g = t.grad(&grads);
        if !g.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient for {}", t.name())));
        }
    }
    let parts = LossParts {
        z_p,
        z_v,
        z_t,
        total: z_p + z_v + z_t,
    };
    Ok((parts, grads))
}
