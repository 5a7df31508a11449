//! AdamW with decoupled weight decay.

use super::{Params, TensorError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Serializable optimizer state: first/second moments per parameter plus the
/// shared step counter.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub moments: BTreeMap<String, MomentPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentPair {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    state: OptimizerState,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Result<Self, TensorError> {
        if !(cfg.lr > 0.0) {
            return Err(TensorError::Invalid(format!(
                "learning rate must be positive, got {}",
                cfg.lr
            )));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(TensorError::Invalid(format!(
                "betas must lie in [0, 1), got ({}, {})",
                cfg.beta1, cfg.beta2
            )));
        }
        if !(cfg.eps > 0.0) {
            return Err(TensorError::Invalid(format!(
                "eps must be positive, got {}",
                cfg.eps
            )));
        }
        Ok(AdamW {
            cfg,
            state: OptimizerState::default(),
        })
    }

    pub fn with_state(cfg: AdamWConfig, state: OptimizerState) -> Result<Self, TensorError> {
        let mut opt = AdamW::new(cfg)?;
        opt.state = state;
        Ok(opt)
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    /// One update over every parameter, reading the accumulated gradients and
    /// leaving them untouched. Decay is decoupled: a parameter with zero
    /// gradient still shrinks by lr * weight_decay * value.
    pub fn step(&mut self, params: &mut Params) {
        self.state.step += 1;
        let t = self.state.step;
        let c = self.cfg;
        let bias1 = 1.0 - c.beta1.powi(t as i32);
        let bias2 = 1.0 - c.beta2.powi(t as i32);
        for p in params.iter_mut() {
            let pair = self
                .state
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| MomentPair {
                    m: vec![0.0; p.value.len()],
                    v: vec![0.0; p.value.len()],
                });
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                pair.m[i] = c.beta1 * pair.m[i] + (1.0 - c.beta1) * g;
                pair.v[i] = c.beta2 * pair.v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = pair.m[i] / bias1;
                let v_hat = pair.v[i] / bias2;
                values[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * values[i]);
            }
        }
    }
}
