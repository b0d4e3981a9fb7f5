use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::tensor::{Matrix, Scalar};

/// Adaptive-moment optimiser hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S = f32> {
    pub step: u64,
    pub m: Vec<Matrix<S>>,
    pub v: Vec<Matrix<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected update.
    pub fn update(&mut self, cfg: &AdamConfig, lr: f64, params: &mut ParamStore<S>, grads: &Gradients<S>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::lit(cfg.beta1);
        let b2 = S::lit(cfg.beta2);
        let one = S::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = S::lit(lr);
        let eps = S::lit(cfg.eps);
        let wd = S::lit(cfg.weight_decay);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pv, &gv), mv), vv) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                let gv = gv + wd * *pv;
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
