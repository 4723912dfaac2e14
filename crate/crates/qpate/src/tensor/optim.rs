//! AdamW with decoupled weight decay.

use super::Tensor;

/// AdamW hyperparameters. Defaults: learning rate 0.001 and weight decay 1e-4,
/// with the conventional beta/eps choices.
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamWState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamWState {
    pub fn new(len: usize) -> Self {
        AdamWState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One AdamW update over flat slices. `step` must be >= 1. The decay term is
/// decoupled: parameters shrink by `1 - lr * weight_decay` before the
/// bias-corrected moment update is applied.
pub fn adamw_step_slice(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    config: &AdamWConfig,
    step: u64,
) {
    debug_assert!(step >= 1);
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    let bc1 = 1.0 - config.beta1.powi(step as i32);
    let bc2 = 1.0 - config.beta2.powi(step as i32);
    let decay = 1.0 - config.learning_rate * config.weight_decay;
    for i in 0..params.len() {
        params[i] *= decay;
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
    }
}

pub fn adamw_step(
    params: &mut Tensor,
    grads: &Tensor,
    state: &mut AdamWState,
    config: &AdamWConfig,
    step: u64,
) {
    adamw_step_slice(params.data_mut(), grads.data(), state, config, step);
}
