//! Adaptive-moment parameter updates with global-norm gradient clipping.

use super::array::{Array, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper<F: Real> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Real> AdamHyper<F> {
    pub fn with_lr(lr: F) -> Self {
        AdamHyper {
            lr,
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.99),
            eps: F::from_f64(1e-8),
        }
    }
}

/// First/second moment estimates, one array per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState<F: Real> {
    pub m: Vec<Array<F>>,
    pub v: Vec<Array<F>>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn for_params(params: &[Array<F>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Array::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Array::zeros(p.shape().to_vec())).collect(),
            step: 0,
        }
    }
}

/// Scale all gradients so their joint L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<F: Real>(grads: &mut [Array<F>], max_norm: F) -> F {
    let mut sq = F::ZERO;
    for g in grads.iter() {
        for &x in g.data() {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > F::ZERO {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// One bias-corrected adaptive-moment step, in place.
pub fn adam_step<F: Real>(
    params: &mut [Array<F>],
    grads: &[Array<F>],
    state: &mut AdamState<F>,
    hyper: AdamHyper<F>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "adam_step: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for i in 0..params.len() {
        if params[i].shape() != grads[i].shape() {
            return Err(Error::dim(format!(
                "adam_step: param {:?} vs grad {:?} at slot {i}",
                params[i].shape(),
                grads[i].shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = hyper.beta1;
    let b2 = hyper.beta2;
    let corr1 = F::ONE - pow_int(b1, t);
    let corr2 = F::ONE - pow_int(b2, t);
    for i in 0..params.len() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = grads[i].data();
        let p = params[i].data_mut();
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (F::ONE - b1) * g[j];
            v[j] = b2 * v[j] + (F::ONE - b2) * g[j] * g[j];
            let mhat = m[j] / corr1;
            let vhat = v[j] / corr2;
            p[j] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

fn pow_int<F: Real>(base: F, exp: i32) -> F {
    let mut acc = F::ONE;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}
