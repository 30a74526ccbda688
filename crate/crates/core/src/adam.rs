//! Adam optimizer for the predictor.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::predictor::{Gradients, PredictorModel};

/// Optimizer hyperparameters; defaults are lr 1e-4, β₁ 0.9, β₂ 0.999,
/// ε 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per trainable tensor in the
/// model's declared order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &PredictorModel, cfg: AdamConfig) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            cfg,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update with bias correction. Gradients must be finite and
/// shaped like the model; a non-finite gradient aborts naming the tensor.
pub fn adam_step(
    model: &mut PredictorModel,
    state: &mut AdamState,
    grads: &Gradients,
) -> Result<()> {
    let names = model.tensor_names();
    let grad_tensors: Vec<Vec<f64>> = grads
        .tensors(model)
        .iter()
        .map(|t| t.to_vec())
        .collect();
    let tensors = model.tensors_mut();
    if grad_tensors.len() != tensors.len() || tensors.len() != state.m.len() {
        return Err(CoreError::CacheMismatch {
            reason: "gradient/model/optimizer tensor counts differ",
        });
    }
    for ((t, g), name) in tensors.iter().zip(&grad_tensors).zip(&names) {
        if t.len() != g.len() {
            return Err(CoreError::ShapeMismatch {
                what: "adam step",
                expected: alloc::format!("{} elements in {name}", t.len()),
                actual: alloc::format!("{}", g.len()),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFiniteGradient {
                tensor: name.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.cfg;
    let bc1 = 1.0 - pow_int(beta1, t);
    let bc2 = 1.0 - pow_int(beta2, t);
    for ((w, g), (m, v)) in tensors
        .into_iter()
        .zip(&grad_tensors)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..w.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= lr * mhat / (crate::math::sqrt(vhat) + eps);
        }
    }
    model.step = state.step;
    Ok(())
}

fn pow_int(base: f64, exp: i32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}
