//! Scalar abstraction for the numeric core.
//!
//! The tensor and differentiation machinery is generic over the floating
//! point type; the crate root exports `f64` aliases, which the simulator
//! and attack layers use throughout.

use std::fmt;

/// Floating-point scalar usable by the tensor/autodiff core.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Cast an `f64` constant into the scalar type.
#[inline]
pub fn cast<F: Scalar>(x: f64) -> F {
    F::from(x).expect("constant representable in scalar type")
}
