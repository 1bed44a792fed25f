//! Classical SGD with momentum and L2 weight decay folded into the gradient:
//! `v ← μ·v + g + λ·θ`, `θ ← θ − η·v`.

use super::config::TrainConfig;
use super::objective::Trainable;
use crate::linalg::Mat;
use crate::model::{HeadGrads, ModelParams};
use crate::prototypes::PrototypeSet;

pub fn sgd_update(param: &mut Mat, grad: &Mat, velocity: &mut Mat, lr: f64, momentum: f64, weight_decay: f64) {
    assert_eq!(param.shape(), grad.shape(), "gradient shape");
    assert_eq!(param.shape(), velocity.shape(), "velocity shape");
    for ((p, &g), v) in param
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(velocity.as_mut_slice())
    {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// Momentum buffers for every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    velocity: Vec<Mat>,
}

impl SgdState {
    pub fn new(params: &ModelParams, protos: &PrototypeSet) -> Self {
        SgdState {
            velocity: Trainable::ALL
                .iter()
                .map(|t| {
                    let (r, c) = t.get(params, protos).shape();
                    Mat::zeros(r, c)
                })
                .collect(),
        }
    }

    pub fn velocity(&self, t: Trainable) -> &Mat {
        &self.velocity[t as usize]
    }
}

/// Updates the active tensors in place; frozen and inactive tensors are untouched.
pub fn sgd_step(
    params: &mut ModelParams,
    protos: &mut PrototypeSet,
    grads: &HeadGrads,
    cfg: &TrainConfig,
    state: &mut SgdState,
) {
    for t in Trainable::ALL {
        if !t.is_active(cfg, protos) {
            continue;
        }
        let velocity = &mut state.velocity[t as usize];
        sgd_update(
            t.get_mut(params, protos),
            t.grad(grads),
            velocity,
            cfg.learning_rate,
            cfg.momentum,
            cfg.weight_decay,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_step() {
        let mut p = Mat::from_rows(&[vec![1.0, -2.0]]);
        let g = Mat::from_rows(&[vec![0.5, 4.0]]);
        let mut v = Mat::zeros(1, 2);
        sgd_update(&mut p, &g, &mut v, 0.1, 0.0, 0.0);
        assert_eq!(p.as_slice(), &[1.0 - 0.05, -2.0 - 0.4]);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Mat::from_rows(&[vec![1.0, -2.0]]);
        let before = p.clone();
        let mut v = Mat::zeros(1, 2);
        for _ in 0..3 {
            sgd_update(&mut p, &Mat::zeros(1, 2), &mut v, 0.1, 0.9, 0.0);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn momentum_recurrence_unrolled() {
        // v1 = g, v2 = 0.9 g + g: total displacement lr · g · (1 + 1.9).
        let g = 0.25;
        let lr = 0.01;
        let mut p = Mat::from_rows(&[vec![0.0]]);
        let mut v = Mat::zeros(1, 1);
        let grad = Mat::from_rows(&[vec![g]]);
        sgd_update(&mut p, &grad, &mut v, lr, 0.9, 0.0);
        sgd_update(&mut p, &grad, &mut v, lr, 0.9, 0.0);
        assert!((p.get(0, 0) + lr * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut p = Mat::from_rows(&[vec![2.0]]);
        let mut v = Mat::zeros(1, 1);
        sgd_update(&mut p, &Mat::zeros(1, 1), &mut v, 0.1, 0.0, 0.5);
        assert!((p.get(0, 0) - 1.9).abs() < 1e-15);
    }
}
