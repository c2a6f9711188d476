//! ADAM with bias correction, operating on the flat parameter vector.

use super::{Grad, ModelConfig, Params, Real};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        let n = cfg.param_count();
        AdamState { m: vec![T::zero(); n], v: vec![T::zero(); n], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One ADAM update; deterministic given the state.
pub fn adam_step<T: Real>(
    params: &Params<T>,
    grad: &Grad<T>,
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<Params<T>> {
    let mut flat = params.to_flat();
    let g = grad.to_flat();
    state.step += 1;
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let lr = T::from_f64(hyper.learning_rate);
    let eps = T::from_f64(hyper.epsilon);
    let one = T::one();
    let bc1 = one - T::from_f64(hyper.beta1.powi(state.step as i32));
    let bc2 = one - T::from_f64(hyper.beta2.powi(state.step as i32));
    for i in 0..flat.len() {
        state.m[i] = b1 * state.m[i] + (one - b1) * g[i];
        state.v[i] = b2 * state.v[i] + (one - b2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        flat[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Params::from_flat(&params.cfg, &flat)
}
