use super::head;
use super::params::{HeadConfig, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{normalize_rows, Mat};
use crate::prototypes::PrototypeSet;

/// Highest score among `label_space`; ties go to the lowest class id.
pub fn argmax_in(scores: &[f64], label_space: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &c in label_space {
        let v = scores[c];
        best = match best {
            Some((bc, bv)) if bv > v || (bv == v && bc < c) => Some((bc, bv)),
            _ => Some((c, v)),
        };
    }
    best.map(|(c, _)| c)
}

fn argmax_rows(z: &Mat, label_space: &[usize]) -> Result<Vec<usize>> {
    if label_space.is_empty() {
        return Err(Error::Parameter("empty label space".into()));
    }
    if let Some(&c) = label_space.iter().find(|&&c| c >= z.cols()) {
        return Err(Error::Parameter(format!("class {c} outside the label space 0..{}", z.cols())));
    }
    Ok((0..z.rows())
        .map(|i| argmax_in(z.row(i), label_space).expect("non-empty label space"))
        .collect())
}

/// Inference logits `z_V + z_T` for one batch of image features. Rows are
/// L2-normalized first, so any positive rescaling of an image is ignored.
pub fn predict_logits(x: &Mat, protos: &PrototypeSet, params: &ModelParams, cfg: &HeadConfig) -> Result<Mat> {
    Ok(head::forward(params, protos, cfg, &normalize_rows(x)?)?.aggregate())
}

/// Labels from the aggregated post-attention logits, restricted to `label_space`.
pub fn predict(
    x: &Mat,
    protos: &PrototypeSet,
    params: &ModelParams,
    cfg: &HeadConfig,
    label_space: &[usize],
) -> Result<Vec<usize>> {
    argmax_rows(&predict_logits(x, protos, params, cfg)?, label_space)
}

/// Argmax of raw cosine similarity; `prototypes` row i is class `classes[i]`.
pub fn cosine_predict(x: &Mat, prototypes: &Mat, classes: &[usize]) -> Result<Vec<usize>> {
    let xn = normalize_rows(x)?;
    let pn = normalize_rows(prototypes)?;
    let sims = xn.matmul_nt(&pn);
    let k = classes.iter().copied().max().map_or(0, |m| m + 1);
    let mut scores = vec![f64::NEG_INFINITY; k];
    let mut out = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        for (col, &c) in classes.iter().enumerate() {
            scores[c] = sims.get(i, col);
        }
        out.push(argmax_in(&scores, classes).ok_or_else(|| Error::Parameter("empty label space".into()))?);
    }
    Ok(out)
}

/// Image-text matching against the textual prototypes.
pub fn zero_shot_predict(x: &Mat, textual: &Mat) -> Result<Vec<usize>> {
    let classes: Vec<usize> = (0..textual.rows()).collect();
    cosine_predict(x, textual, &classes)
}

/// Image-image matching against visual prototypes (row i is class i).
pub fn visual_proto_predict(x: &Mat, visual: &Mat) -> Result<Vec<usize>> {
    let classes: Vec<usize> = (0..visual.rows()).collect();
    cosine_predict(x, visual, &classes)
}
