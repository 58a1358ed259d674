//! Scalar abstraction shared by every model in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the simulator is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal or parameter into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 value representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Absolute tolerance used by feasibility comparisons of energy sums of
    /// magnitude `scale`. Scales with machine epsilon so `f32` runs stay usable.
    #[inline]
    fn balance_tol(scale: Self) -> Self {
        Self::epsilon() * Self::lit(64.0) * (scale.abs() + Self::one())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn clamp01<T: Scalar>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_round_trips() {
        assert_eq!(f64::lit(0.325), 0.325);
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(2.5f32.as_f64(), 2.5);
    }

    #[test]
    fn tolerance_tracks_precision() {
        assert!(f64::balance_tol(10.0) < 1e-12);
        assert!(f32::balance_tol(10.0) > 1e-6);
        assert_eq!(clamp01(1.7f64), 1.0);
        assert_eq!(clamp01(-0.2f64), 0.0);
    }
}
