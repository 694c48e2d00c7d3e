//! Central finite-difference verification of tape gradients.
//!
//! Runs in `f64`. The function under test must be pure and deterministic;
//! behaviour is undefined otherwise (the check would chase noise).

use super::array::Array;
use super::tape::{Tape, ValueId};
use crate::error::{Error, Result};

/// Compare analytic gradients against central finite differences.
///
/// `build` must construct the scalar loss from the given leaves on the
/// provided tape; it is re-invoked on perturbed copies of `point`, so it
/// must depend on nothing else. Returns the maximum over all coordinates of
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<B>(point: &[Array<f64>], eps: f64, build: B) -> Result<f64>
where
    B: Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::param(format!(
            "grad_check: eps must lie in [1e-6, 1e-3], got {eps}"
        )));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let leaves: Vec<ValueId> = point.iter().map(|a| tape.leaf(a.clone())).collect();
    let root = build(&mut tape, &leaves)?;
    if !tape.value(root).is_scalar() {
        return Err(Error::contract(format!(
            "grad_check: loss must be scalar, got shape {:?}",
            tape.value(root).shape()
        )));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Array<f64>> = leaves.iter().map(|&id| grads.grad(id)).collect();

    let eval = |arrays: &[Array<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = arrays.iter().map(|a| tape.leaf(a.clone())).collect();
        let root = build(&mut tape, &ids)?;
        Ok(tape.value(root).data()[0])
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Array<f64>> = point.to_vec();
    for a in 0..point.len() {
        for i in 0..point[a].numel() {
            let orig = probe[a].data()[i];
            probe[a].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[a].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[a].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic[a].data()[i];
            let denom = 1.0f64.max(exact.abs()).max(numeric.abs());
            let rel = (exact - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
