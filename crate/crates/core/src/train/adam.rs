use std::collections::BTreeMap;

use super::TrainError;
use crate::model::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// First/second moment estimates per parameter and the shared step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

/// One bias-corrected Adam update of every parameter named in `grads`.
///
/// The step counter is incremented first, so the first call uses `t = 1`.
/// Gradients are checked for NaN/Inf before anything is modified.
pub fn adam_step(
    params: &mut Params,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        let param = params
            .get(name)
            .ok_or_else(|| TrainError::UnknownParam(name.clone()))?;
        if param.numel() != g.len() {
            return Err(TrainError::GradientShape {
                name: name.clone(),
                expected: param.numel(),
                found: g.len(),
            });
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                name: name.clone(),
                index: i,
                value: g[i],
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        eps,
    } = *config;
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let param = params.get_mut(name).expect("checked above");
        let moments = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: vec![0.0; g.len()],
            v: vec![0.0; g.len()],
        });
        let values = param.data_mut();
        for i in 0..g.len() {
            moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g[i];
            moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = moments.m[i] / correction1;
            let v_hat = moments.v[i] / correction2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients together so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= scale);
    }
    norm
}
