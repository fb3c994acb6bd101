use serde::{Deserialize, Serialize};

use super::params::Params;
use super::tensor::Scalar;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Pretraining default.
    pub fn pretrain() -> Self {
        AdamConfig {
            lr: 2e-4,
            ..AdamConfig::finetune()
        }
    }

    /// Fine-tuning default.
    pub fn finetune() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        AdamConfig { lr, ..self }
    }
}

/// Moment buffers for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &Params<T>) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(params: &mut Params<T>, grads: &Params<T>, state: &mut AdamState<T>) -> Result<()> {
    params.check_layout(grads)?;
    params.check_layout(&state.m)?;
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    let corr1 = T::of(1.0 - c.beta1.powi(t));
    let corr2 = T::of(1.0 - c.beta2.powi(t));
    let (lr, eps) = (T::of(c.lr), T::of(c.eps));
    for (((p, g), m), v) in params
        .entries
        .iter_mut()
        .zip(&grads.entries)
        .zip(&mut state.m.entries)
        .zip(&mut state.v.entries)
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + one_b1 * gi;
            v.data[i] = b2 * v.data[i] + one_b2 * gi * gi;
            let m_hat = m.data[i] / corr1;
            let v_hat = v.data[i] / corr2;
            p.data[i] = p.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
