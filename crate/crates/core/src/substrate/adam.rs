//! Adam with bias correction.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub hp: AdamParams,
}

impl AdamState {
    pub fn new(param_count: usize, hp: AdamParams) -> Self {
        Self {
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            hp,
        }
    }
}

/// One Adam update in place. Errors on length mismatch or non-positive lr.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grad.len() != state.m.len() {
        return Err(Error::DimMismatch {
            context: "adam_step",
            expected: state.m.len(),
            got: if params.len() != state.m.len() {
                params.len()
            } else {
                grad.len()
            },
        });
    }
    if !(state.hp.lr > 0.0) {
        return Err(Error::Config(format!("adam lr must be > 0, got {}", state.hp.lr)));
    }
    state.step += 1;
    let t = state.step as i32;
    let AdamParams {
        lr,
        beta1,
        beta2,
        eps,
    } = state.hp;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
