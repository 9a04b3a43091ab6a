use serde::{Deserialize, Serialize};

use super::params::TransducerParams;
use crate::error::{Error, Result};

/// Linear warmup to `peak`, then inverse square-root decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoamSchedule {
    pub peak: f64,
    pub warmup: u64,
}

impl NoamSchedule {
    /// Learning rate at 1-based `step`.
    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.peak * (s / w).min((w / s).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub schedule: NoamSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            schedule: NoamSchedule {
                peak: 3e-3,
                warmup: 100,
            },
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 1e-4,
            grad_clip: Some(5.0),
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.schedule.peak > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.grad_clip.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid optimizer settings".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: TransducerParams,
    pub v: TransducerParams,
}

impl OptimizerState {
    pub fn new(params: &TransducerParams) -> Self {
        Self {
            step: 0,
            m: TransducerParams::zeros(params.dims),
            v: TransducerParams::zeros(params.dims),
        }
    }
}

/// One AdamW update with decoupled weight decay. Returns the learning rate used.
pub fn optimizer_step(
    params: &mut TransducerParams,
    grads: &TransducerParams,
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> f64 {
    state.step += 1;
    let lr = cfg.schedule.lr(state.step);
    let clip = match cfg.grad_clip {
        Some(c) => {
            let n = grads.norm();
            if n > c {
                c / n
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let ps = params.slices_mut();
    let gs = grads.slices();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g[i] * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * p[i]);
        }
    }
    lr
}
