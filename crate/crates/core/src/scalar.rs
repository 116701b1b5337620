//! Scalar abstractions.
//!
//! Everything that does floating-point regression is generic over [`Real`]
//! (`f32` or `f64`). The exact-enumeration oracle only needs field
//! arithmetic, so it is generic over [`Field`], which is implemented for the
//! floats and for arbitrary-precision rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use ndarray::ScalarOperand;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// Floating point scalar used by the regression and estimation code.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics only if the type cannot represent
    /// finite `f64` values at all, which never happens for `f32`/`f64`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to Real")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Ordered field arithmetic, enough for exact conditional expectations.
pub trait Field: Num + Signed + Clone + PartialOrd + Debug + Send + Sync + 'static {
    /// Conversion from a finite `f64`. Exact for the rational field.
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Field for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Field for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl Field for BigRational {
    fn from_f64(v: f64) -> Self {
        BigRational::from_float(v).expect("finite value")
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}
