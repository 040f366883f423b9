//! Scalar abstraction shared by every numerical module.
//!
//! All physics and estimation code is written against [`Scalar`], which is
//! implemented for `f32` and `f64`. Most callers want the `f64` aliases
//! exported from the crate root.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type usable throughout the crate.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Display + LowerExp + Debug + Send + Sync
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    /// Lossy conversion back to `f64` for I/O and RNG plumbing.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn lit<T: Scalar>(value: f64) -> T {
    T::lit(value)
}

pub fn radians<T: Scalar>(degrees: T) -> T {
    degrees * T::pi() / lit(180.0)
}

pub fn degrees<T: Scalar>(radians: T) -> T {
    radians * lit(180.0) / T::pi()
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn wrap_degrees<T: Scalar>(angle: T) -> T {
    let full = lit::<T>(360.0);
    let mut wrapped = angle % full;
    if wrapped < T::zero() {
        wrapped += full;
    }
    if wrapped >= full {
        wrapped -= full;
    }
    wrapped
}
