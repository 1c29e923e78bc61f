//! Scalar abstraction for the numeric core.
//!
//! All channel, allocator, and metrics math is generic over [`Scalar`], so
//! the same code runs in `f32` or `f64`. The crate root re-exports `f64`
//! aliases for the common case.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into the active scalar type.
///
/// Entropy and configuration constants are canonically `f64`; this is the
/// single funnel through which they enter generic code.
#[inline]
pub fn real<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 value representable in scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_round_trips_for_both_widths() {
        assert_eq!(real::<f64>(0.25), 0.25);
        assert_eq!(real::<f32>(0.25), 0.25f32);
    }
}
