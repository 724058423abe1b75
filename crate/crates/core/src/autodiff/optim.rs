//! Adam with coupled L2 decay, AdamW with decoupled decay, and the linear
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// AdamW when set: decay is applied to the weights directly instead of
    /// being folded into the gradient.
    pub decoupled: bool,
}

impl AdamConfig {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decoupled: false,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            decoupled: true,
            ..Self::adam(lr, weight_decay)
        }
    }
}

/// Optimizer state: first and second moments per parameter plus the step
/// counter used for bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| -> Vec<Matrix> {
            p.iter().map(|(_, _, m)| Matrix::zeros(m.rows(), m.cols())).collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            decoupled,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let theta = params.get_mut(id).as_mut_slice();
            let m = self.m[id.0].as_mut_slice();
            let v = self.v[id.0].as_mut_slice();
            for (((p, &gi), mi), vi) in theta.iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                let gi = if decoupled {
                    *p -= lr * weight_decay * *p;
                    gi
                } else {
                    gi + weight_decay * *p
                };
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Linear interpolation from `lr_start` at step 0 to `lr_end` at
/// `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total_steps == 0 {
        return lr_start;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    lr_start * (1.0 - frac) + lr_end * frac
}
