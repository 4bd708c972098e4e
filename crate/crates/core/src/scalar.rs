//! Scalar abstraction shared by the tensor engine, the GCN models and the
//! conformal scores.
//!
//! Everything numeric in this crate is written against [`Scalar`] so the same
//! code runs in `f32` or `f64`. The crate-root aliases pin `f64`, which is what
//! the pipelines and the gradient checks use.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; exact for `f64` itself.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every float scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float scalar converts to f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sums in `f64` regardless of the scalar width.
#[inline]
pub(crate) fn sum_f64<T: Scalar>(values: impl IntoIterator<Item = T>) -> f64 {
    values.into_iter().map(Scalar::as_f64).sum()
}
