//! Floating-point scalar abstraction: f32 for runs, f64 for exact oracles.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating point scalar the numeric core is generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` constant. Panics only on values outside the type's
    /// range, which never happens for the constants used here.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant out of range")
    }

    /// Lossy view as f64, for logging and CSV output.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::NumCast::from(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
