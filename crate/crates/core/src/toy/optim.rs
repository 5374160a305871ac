//! AdamW with decoupled weight decay, linear warmup followed by linear decay,
//! and global gradient-norm clipping.
//!
//! For each parameter `x` with gradient `g` at step `s` (1-based):
//!
//! ```text
//! x <- x - lr_s * wd * x
//! m <- b1 m + (1 - b1) g
//! v <- b2 v + (1 - b2) g^2
//! x <- x - lr_s * (m / (1 - b1^s)) / (sqrt(v / (1 - b2^s)) + eps)
//! ```

use crate::error::{Error, Result};

use super::model::{ModelGrads, ToyModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "adam betas must lie in (0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "adam eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, model: &ToyModel) -> Self {
        let n = model.num_params();
        Self {
            config,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, model: &mut ToyModel, grads: &ModelGrads, lr: f64) {
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bias1 = 1.0 - beta1.powf(self.step as f64);
        let bias2 = 1.0 - beta2.powf(self.step as f64);

        let params = model
            .embed
            .as_mut_slice()
            .iter_mut()
            .chain(model.out_proj.as_mut_slice());
        let grads = grads
            .embed
            .as_slice()
            .iter()
            .chain(grads.out_proj.as_slice());
        for (((x, &g), m), v) in params
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *x -= lr * weight_decay * *x;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Linear warmup to `peak` over `warmup` steps, then linear decay to zero at
/// step `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    /// Learning rate for 1-based `step`.
    pub fn at(&self, step: usize) -> f64 {
        if self.warmup > 0 && step <= self.warmup {
            return self.peak * step as f64 / self.warmup as f64;
        }
        if self.total <= self.warmup {
            return self.peak;
        }
        let left = self.total.saturating_sub(step);
        self.peak * left as f64 / (self.total - self.warmup) as f64
    }
}

/// Rescales `grads` so its global norm is at most `max_norm`. Returns the
/// norm before and after clipping.
pub fn clip_global_norm(grads: &mut ModelGrads, max_norm: f64) -> (f64, f64) {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
        (norm, grads.global_norm())
    } else {
        (norm, norm)
    }
}
