//! Central finite-difference gradient oracle.
//!
//! Used by the verification command and the test suites to certify that
//! reverse-mode gradients are exact. Deliberately independent of the graph
//! machinery: it only re-evaluates a black-box objective at perturbed
//! parameter vectors.

use crate::numerics::ParamVector;

/// Central finite differences of `objective` at `params` with step `h`.
///
/// The objective must be deterministic (freeze any stochastic draws before
/// calling) and is evaluated `2 * params.len()` times.
pub fn finite_difference_gradient(
    params: &ParamVector,
    h: f64,
    mut objective: impl FnMut(&ParamVector) -> f64,
) -> ParamVector {
    let mut grad = params.zeros_like();
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let plus = objective(&probe);
        probe.values_mut()[i] = orig - h;
        let minus = objective(&probe);
        probe.values_mut()[i] = orig;
        grad.values_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Largest relative error between two gradient vectors.
///
/// Per-entry error is `|a - b| / max(|a|, |b|, floor)`; the floor keeps
/// near-zero entries from dominating through roundoff.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
