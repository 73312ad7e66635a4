//! Adam with bias correction and a cosine-decayed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::tensor::Tensor;

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    adam_m: Vec<f32>,
    adam_v: Vec<f32>,
    step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let n = value.len();
        Self {
            grad: Tensor::zeros(value.shape()),
            value,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn adam_moments(&self) -> (&[f32], &[f32]) {
        (&self.adam_m, &self.adam_v)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Add `g` into the stored gradient.
    pub fn accumulate(&mut self, g: &[f32]) {
        for (acc, &v) in self.grad.data_mut().iter_mut().zip(g) {
            *acc += v;
        }
    }

    /// Zero both Adam moments at one flat position.
    pub fn reset_moments_at(&mut self, index: usize) {
        self.adam_m[index] = 0.0;
        self.adam_v[index] = 0.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_init: 3e-4,
            lr_final: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_epochs: 1000,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_final >= 0.0 && self.lr_final <= self.lr_init) {
            return Err(DsnError::Config(format!(
                "learning rates must satisfy 0 <= lr_final <= lr_init (got {} and {})",
                self.lr_final, self.lr_init
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(DsnError::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.eps <= 0.0 {
            return Err(DsnError::Config("eps must be positive".into()));
        }
        if self.total_epochs == 0 {
            return Err(DsnError::Config("total_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cosine decay from `lr_init` at epoch 0 to `lr_final` at `total_epochs`;
/// later epochs are clamped.
pub fn cosine_lr(epoch: usize, cfg: &OptimConfig) -> f64 {
    let total = cfg.total_epochs.max(1);
    let e = epoch.min(total) as f64;
    let cos = (e * std::f64::consts::PI / total as f64).cos();
    cfg.lr_final + (cfg.lr_init - cfg.lr_final) * (1.0 + cos) / 2.0
}

/// One Adam update of `param` followed by zeroing its gradient.
///
/// A non-finite gradient leaves the parameter untouched.
pub fn adam_step(param: &mut Parameter, lr: f64, cfg: &OptimConfig) -> Result<()> {
    if !param.grad.all_finite() {
        return Err(DsnError::NonFiniteGradient);
    }
    param.step_count += 1;
    let t = param.step_count as i32;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = (1.0 - cfg.beta1.powi(t)) as f32;
    let c2 = (1.0 - cfg.beta2.powi(t)) as f32;
    let (lr, eps) = (lr as f32, cfg.eps as f32);
    let grads = param.grad.data();
    let values = param.value.data_mut();
    for (((w, &g), m), v) in values
        .iter_mut()
        .zip(grads)
        .zip(param.adam_m.iter_mut())
        .zip(param.adam_v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    param.zero_grad();
    Ok(())
}
