//! Dense tensor arithmetic with reverse-mode differentiation.
//!
//! Tensors are row-major, immutable-by-default values. Operations on tracked
//! tensors record a dynamic graph; [`Tensor::backward`] walks it in reverse
//! topological order and accumulates gradients into every tracked leaf.
//! Graph recording is single-threaded; untracked tensors are plain values.

mod ops;
mod tensor;

pub use tensor::Tensor;

use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar the tensor core is generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for lifting an `f64` constant into the generic scalar type.
#[inline]
pub(crate) fn c<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("constant representable in scalar type")
}

/// Norm floor below which vector directions are considered degenerate.
pub const NORM_EPS: f64 = 1e-12;
