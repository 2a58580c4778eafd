use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::model::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| alloc::vec![0.0; p.numel()]).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// Rejects non-finite gradients, naming the first offending tensor.
pub fn check_finite(params: &ParamStore, grads: &[Vec<f64>]) -> Result<()> {
    for ((name, _), g) in params.iter().zip(grads) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(())
}

/// Rescales all gradients together so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().flatten().map(|g| g * g).sum());
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(shape_err("adam", format!("{} gradients, {} moments for {} parameters", grads.len(), state.m.len(), params.len())));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if g.len() != p.numel() {
            return Err(shape_err("adam", format!("gradient of {name} has {} values, expected {}", g.len(), p.numel())));
        }
    }
    check_finite(params, grads)?;
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(BETA1, t);
    let c2 = 1.0 - libm::pow(BETA2, t);
    for (k, (_, p)) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &grads[k]);
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *x -= lr * mh / (libm::sqrt(vh) + EPSILON);
        }
    }
    Ok(())
}
