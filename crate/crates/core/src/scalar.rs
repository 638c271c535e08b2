//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::Serialize;

/// Floating point type the solvers are generic over.
///
/// Implemented for `f32` and `f64`. Random draws are produced in `f64` and
/// converted, so a lower-precision scalar only changes the arithmetic of the
/// recursions, not the noise stream.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + LowerExp
    + Serialize
    + Send
    + Sync
    + 'static
{
    /// Largest magnitude a solution value may take before the recursion is
    /// declared to have blown up.
    fn blowup_threshold() -> Self {
        Self::from_f64(1e12).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into the working scalar.
#[inline]
pub fn lit<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts a count into the working scalar.
#[inline]
pub fn from_usize<S: Scalar>(n: usize) -> S {
    S::from_usize(n).expect("count representable in scalar type")
}

#[inline]
pub fn to_f64<S: Scalar>(x: S) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
