//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the solver is generic over (`f32` and `f64` ship).
///
/// Tolerances quoted throughout the docs (`1e-12` feasibility and the like)
/// assume `f64`; `f32` instantiations work but only at single precision.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `Σ xᵢ yᵢ`.
#[inline]
pub(crate) fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// `‖x − y‖₁`.
#[inline]
pub fn l1_distance<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs())
}

#[inline]
pub(crate) fn sum<T: Scalar>(x: &[T]) -> T {
    x.iter().copied().sum()
}

/// Largest entry, `-inf` for an empty slice.
#[inline]
pub(crate) fn max_entry<T: Scalar>(x: &[T]) -> T {
    x.iter().copied().fold(T::neg_infinity(), T::max)
}
