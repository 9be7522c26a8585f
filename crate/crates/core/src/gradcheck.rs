//! Finite-difference oracles for validating recorded gradients.
//!
//! Test infrastructure: these routines never feed the attack path, they
//! exist so gradients (first and second order) can be checked against an
//! independent numerical scheme.

use crate::scalar::Scalar;
use crate::tensor::TensorBase;

/// Central-difference gradient of `f` at `at`, perturbing one element at a
/// time by `±step`.
pub fn central_difference<F: Scalar>(
    mut f: impl FnMut(&TensorBase<F>) -> F,
    at: &TensorBase<F>,
    step: F,
) -> TensorBase<F> {
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let mut plus = at.data().to_vec();
        let mut minus = at.data().to_vec();
        plus[i] = plus[i] + step;
        minus[i] = minus[i] - step;
        let fp = f(&TensorBase::from_raw(at.shape().to_vec(), plus));
        let fm = f(&TensorBase::from_raw(at.shape().to_vec(), minus));
        grad.push((fp - fm) / (step + step));
    }
    TensorBase::from_raw(at.shape().to_vec(), grad)
}

/// Largest elementwise relative error between two same-shaped tensors,
/// with `floor` preventing blow-up on near-zero reference entries.
pub fn max_relative_error<F: Scalar>(got: &TensorBase<F>, want: &TensorBase<F>, floor: F) -> F {
    assert_eq!(got.shape(), want.shape(), "comparing mismatched shapes");
    got.data()
        .iter()
        .zip(want.data().iter())
        .fold(F::zero(), |acc, (&a, &b)| {
            let denom = b.abs().max(floor);
            acc.max((a - b).abs() / denom)
        })
}
