//! Scalar abstraction over the tensor element type.

use std::fmt;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point element type for tensors: `f32` or `f64`.
///
/// Constants and file I/O go through `f64`, so a given seed produces the
/// same random streams regardless of the scalar a model is built with.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("constant representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
