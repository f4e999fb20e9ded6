use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one buffer per tensor of the optimized set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut param_tensors = params.tensors_mut();
    if grad_tensors.len() != param_tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient tensors for {} parameter tensors",
            grad_tensors.len(),
            param_tensors.len()
        )));
    }
    for (g, p) in grad_tensors.iter().zip(param_tensors.iter()) {
        if g.values.len() != p.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}: gradient has {} values, parameter {}",
                g.name,
                g.values.len(),
                p.len()
            )));
        }
    }
    if state.m.is_empty() {
        state.m = param_tensors.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != param_tensors.len()
        || state
            .m
            .iter()
            .zip(param_tensors.iter())
            .any(|(m, p)| m.len() != p.len())
    {
        return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (ti, p) in param_tensors.iter_mut().enumerate() {
        let g = grad_tensors[ti].values;
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
