//! Central finite-difference gradient oracle.
//!
//! Deliberately independent of the backward tape: it only evaluates the
//! forward map, so it can falsify any backward rule.

use alloc::vec::Vec;

use super::Tensor;
use crate::math::Scalar;

/// Numeric gradient of `f` at `x` by central differences with step `h`.
/// `f` must be a pure function of the flat input.
pub fn numeric_grad<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g.push((fp - fm) / (2.0 * h));
    }
    g
}

/// Relative error with a unit floor: |a - b| / max(1, |a|, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = num_traits::Float::max(1.0, num_traits::Float::max(a.abs(), b.abs()));
    (a - b).abs() / denom
}

/// Check a scalar-valued tensor function against finite differences.
///
/// `build` maps flat leaf inputs to a scalar loss tensor; it is invoked
/// repeatedly with perturbed inputs, so it must rebuild the graph each
/// call. Returns the maximum relative error over all input coordinates.
pub fn check_scalar_fn<S, F>(build: F, x0: &[f64], h: f64) -> f64
where
    S: Scalar,
    F: Fn(&[S]) -> (Tensor<S>, Tensor<S>),
{
    let to_s = |xs: &[f64]| -> Vec<S> { xs.iter().map(|&v| S::from_f64(v)).collect() };
    let (leaf, loss) = build(&to_s(x0));
    loss.backward().expect("loss must be scalar");
    let analytic: Vec<f64> = leaf
        .grad()
        .expect("leaf did not receive a gradient")
        .iter()
        .map(|g| g.as_f64())
        .collect();
    let numeric = numeric_grad(
        |xs| {
            let (_, loss) = build(&to_s(xs));
            loss.item().as_f64()
        },
        x0,
        h,
    );
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, num_traits::Float::max)
}
