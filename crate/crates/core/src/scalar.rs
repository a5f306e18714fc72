//! Scalar abstractions shared by the numeric modules.
//!
//! [`Scalar`] covers exact field arithmetic (rationals included) and is all the
//! closed-form recursions need. [`Real`] adds the transcendental functions used
//! by the spectral, Monte Carlo and distance code and is implemented for `f32`
//! and `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, Num, NumCast, Signed};

/// Ordered field element: enough for the bootstrap and cluster recursions.
pub trait Scalar: Num + Signed + FromPrimitive + Clone + PartialOrd + Debug + Display {
    fn from_usize_exact(n: usize) -> Self {
        Self::from_usize(n).expect("integer representable in scalar type")
    }

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite value representable in scalar type")
    }
}

impl<T> Scalar for T where T: Num + Signed + FromPrimitive + Clone + PartialOrd + Debug + Display {}

/// Floating point scalar: f32 or f64.
pub trait Real: Scalar + Float + NumCast + Copy + Send + Sync + Default + 'static {
    fn to_f64_lossy(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn cast<T: Real>(x: f64) -> T {
    <T as NumCast>::from(x).expect("f64 castable to real scalar")
}
