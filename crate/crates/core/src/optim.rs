//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Gradients, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: PolicyParams,
    pub v: PolicyParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &PolicyParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update at learning rate `lr` (overriding `hyper.lr`, so callers
/// can apply a schedule).
pub fn adamw_step(
    params: &mut PolicyParams,
    grads: &Gradients,
    state: &mut AdamState,
    hyper: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::shape(
            format!("{} parameters", params.num_params()),
            format!("{} gradient entries", grads.num_params()),
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    let decay = 1.0 - lr * hyper.weight_decay;
    let g_all = grads.tensors();
    let mut ms = state.m.slices_mut();
    let mut vs = state.v.slices_mut();
    for (k, p) in params.slices_mut().into_iter().enumerate() {
        let g = g_all[k].2;
        let m = &mut ms[k];
        let v = &mut vs[k];
        for idx in 0..p.len() {
            let gi = g[idx];
            m[idx] = hyper.beta1 * m[idx] + (1.0 - hyper.beta1) * gi;
            v[idx] = hyper.beta2 * v[idx] + (1.0 - hyper.beta2) * gi * gi;
            let m_hat = m[idx] / bc1;
            let v_hat = v[idx] / bc2;
            p[idx] = p[idx] * decay - lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// Cosine decay from `base` to `min_lr` over `total` steps, after an
/// optional linear warmup. `total = 0` leaves the length to the caller
/// (see [`CosineSchedule::with_total`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosineSchedule {
    pub base: f64,
    pub min_lr: f64,
    pub warmup: u64,
    pub total: u64,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self {
            base: 1e-4,
            min_lr: 0.0,
            warmup: 0,
            total: 0,
        }
    }
}

impl CosineSchedule {
    /// Fills in an unset length.
    pub fn with_total(self, steps: u64) -> Self {
        if self.total == 0 {
            Self { total: steps, ..self }
        } else {
            self
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.base * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let k = (step - self.warmup).min(span) as f64 / span as f64;
        self.min_lr + 0.5 * (self.base - self.min_lr) * (1.0 + (std::f64::consts::PI * k).cos())
    }
}
