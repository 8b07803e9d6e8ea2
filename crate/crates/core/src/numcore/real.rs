use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the differentiable substrate.
///
/// Training and inference run in `f32`; gradient checks instantiate the same
/// kernels in `f64`.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    fn from_f32(v: f32) -> Self {
        Self::lit(v as f64)
    }
}

impl Real for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
}

impl Real for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
}
