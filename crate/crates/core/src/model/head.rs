//! The differentiable head as one forward graph:
//!
//! ```text
//! tokens = [P_I·samples ; P_I·V ; P_I·V̂ ; P_T·T]
//! x', V', V̂', T' = Attn(tokens)            (identity when attention is off)
//! z_P = cos(P_I·samples, P_T·T) / τ_t
//! z_V = cos(x', [V' | V̂']) / τ_v            (columns in class order)
//! z_T = cos(x', T') / τ_t
//! ```
//!
//! Without virtual prototypes, new-class columns of `z_V` are scored
//! against the class's transformed textual prototype instead.

use super::attention::{attention_backward, attention_forward, AttentionCache};
use super::params::{HeadConfig, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{CosineLogits, Mat};
use crate::prototypes::PrototypeSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ProtoSource {
    Visual(usize),
    Virtual(usize),
    Text(usize),
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug)]
pub struct HeadForward {
    samples: Mat,
    n_samples: usize,
    n_visual_protos: usize,
    n_virtual_tokens: usize,
    attention: Option<AttentionCache>,
    sources: Vec<ProtoSource>,
    pub z_p: CosineLogits,
    pub z_v: CosineLogits,
    pub z_t: CosineLogits,
}

impl HeadForward {
    pub fn z_p(&self) -> &Mat {
        &self.z_p.logits
    }

    pub fn z_v(&self) -> &Mat {
        &self.z_v.logits
    }

    pub fn z_t(&self) -> &Mat {
        &self.z_t.logits
    }

    /// Inference logits `z_V + z_T`.
    pub fn aggregate(&self) -> Mat {
        let mut z = self.z_v.logits.clone();
        z.add_assign(&self.z_t.logits);
        z
    }
}

/// Gradients for every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub proj_image: Mat,
    pub proj_text: Mat,
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
    pub output: Mat,
    pub virtual_: Mat,
    /// Gradient with respect to the sample rows fed to `forward`.
    pub samples: Mat,
}

fn check_dims(params: &ModelParams, protos: &PrototypeSet, samples: &Mat) -> Result<()> {
    let d = params.dim();
    if protos.dim() != d || samples.cols() != d {
        return Err(Error::format(
            0,
            format!(
                "dimension mismatch: model {d}, prototypes {}, samples {}",
                protos.dim(),
                samples.cols()
            ),
        ));
    }
    Ok(())
}

/// Runs the head on `samples` (one row per image feature).
pub fn forward(
    params: &ModelParams,
    protos: &PrototypeSet,
    cfg: &HeadConfig,
    samples: &Mat,
) -> Result<HeadForward> {
    check_dims(params, protos, samples)?;
    let s = samples.rows();
    let kb = protos.visual.rows();
    let kn = if cfg.use_virtual { protos.virtual_.rows() } else { 0 };
    let k = protos.num_classes();

    let xs = samples.matmul_nt(&params.proj_image);
    let vp = protos.visual.matmul_nt(&params.proj_image);
    let vhp = if cfg.use_virtual {
        protos.virtual_.matmul_nt(&params.proj_image)
    } else {
        Mat::zeros(0, params.dim())
    };
    let tp = protos.textual.matmul_nt(&params.proj_text);

    let z_p = CosineLogits::forward(&xs, &tp, params.tau_t)?;

    let tokens = Mat::vstack(&[&xs, &vp, &vhp, &tp]);
    let n_visual = s + kb + kn;
    let (mixed, attention) = if cfg.use_attention {
        let (out, cache) = attention_forward(&tokens, params.attention(), cfg.mask, n_visual);
        (out, Some(cache))
    } else {
        (tokens, None)
    };
    let x_out = mixed.slice_rows(0, s);
    let t_out = mixed.slice_rows(n_visual, n_visual + k);

    let mut base_slot = vec![None; k];
    for (b, &c) in protos.split.base_ids.iter().enumerate() {
        base_slot[c] = Some(b);
    }
    let mut new_slot = vec![None; k];
    for (j, &c) in protos.split.new_ids.iter().enumerate() {
        new_slot[c] = Some(j);
    }
    let sources: Vec<ProtoSource> = (0..k)
        .map(|c| match (base_slot[c], new_slot[c]) {
            (Some(b), _) => ProtoSource::Visual(b),
            (None, Some(j)) if cfg.use_virtual => ProtoSource::Virtual(j),
            _ => ProtoSource::Text(c),
        })
        .collect();
    let proto_rows: Vec<usize> = sources
        .iter()
        .map(|src| match *src {
            ProtoSource::Visual(b) => s + b,
            ProtoSource::Virtual(j) => s + kb + j,
            ProtoSource::Text(c) => n_visual + c,
        })
        .collect();
    let visual_protos = mixed.select_rows(&proto_rows);

    let z_v = CosineLogits::forward(&x_out, &visual_protos, params.tau_v)?;
    let z_t = CosineLogits::forward(&x_out, &t_out, params.tau_t)?;

    Ok(HeadForward {
        samples: samples.clone(),
        n_samples: s,
        n_visual_protos: kb,
        n_virtual_tokens: kn,
        attention,
        sources,
        z_p,
        z_v,
        z_t,
    })
}

/// Back-propagates logit gradients to every trainable tensor and to the
/// sample rows. Frozen prototypes receive nothing.
pub fn backward(
    fwd: &HeadForward,
    params: &ModelParams,
    protos: &PrototypeSet,
    d_zp: &Mat,
    d_zv: &Mat,
    d_zt: &Mat,
) -> HeadGrads {
    let d = params.dim();
    let (s, kb, kn) = (fwd.n_samples, fwd.n_visual_protos, fwd.n_virtual_tokens);
    let k = protos.num_classes();
    let n_visual = s + kb + kn;
    let n_tokens = n_visual + k;

    // Gradient with respect to the attention output rows.
    let mut d_mixed = Mat::zeros(n_tokens, d);
    let (dx_v, dprotos) = fwd.z_v.backward(d_zv);
    let (dx_t, dt_out) = fwd.z_t.backward(d_zt);
    for i in 0..s {
        for ((g, a), b) in d_mixed.row_mut(i).iter_mut().zip(dx_v.row(i)).zip(dx_t.row(i)) {
            *g = a + b;
        }
    }
    for c in 0..k {
        for (g, a) in d_mixed.row_mut(n_visual + c).iter_mut().zip(dt_out.row(c)) {
            *g += a;
        }
    }
    for (col, src) in fwd.sources.iter().enumerate() {
        let row = match *src {
            ProtoSource::Visual(b) => s + b,
            ProtoSource::Virtual(j) => s + kb + j,
            ProtoSource::Text(c) => n_visual + c,
        };
        for (g, a) in d_mixed.row_mut(row).iter_mut().zip(dprotos.row(col)) {
            *g += a;
        }
    }

    let zeros = || Mat::zeros(d, d);
    let (d_tokens, dq, dk, dv, dout) = match &fwd.attention {
        Some(cache) => {
            let g = attention_backward(cache, params.attention(), &d_mixed);
            (g.input, g.query, g.key, g.value, g.output)
        }
        None => (d_mixed, zeros(), zeros(), zeros(), zeros()),
    };

    let mut d_xs = d_tokens.slice_rows(0, s);
    let d_vp = d_tokens.slice_rows(s, s + kb);
    let d_vhp = d_tokens.slice_rows(s + kb, n_visual);
    let mut d_tp = d_tokens.slice_rows(n_visual, n_tokens);
    let (dxs_p, dtp_p) = fwd.z_p.backward(d_zp);
    d_xs.add_assign(&dxs_p);
    d_tp.add_assign(&dtp_p);

    let mut d_proj_image = d_xs.t_matmul(&fwd.samples);
    d_proj_image.add_assign(&d_vp.t_matmul(&protos.visual));
    let mut d_virtual = Mat::zeros(protos.virtual_.rows(), d);
    if kn > 0 {
        d_proj_image.add_assign(&d_vhp.t_matmul(&protos.virtual_));
        d_virtual = d_vhp.matmul(&params.proj_image);
    }
    HeadGrads {
        proj_image: d_proj_image,
        proj_text: d_tp.t_matmul(&protos.textual),
        query: dq,
        key: dk,
        value: dv,
        output: dout,
        virtual_: d_virtual,
        samples: d_xs.matmul(&params.proj_image),
    }
}
