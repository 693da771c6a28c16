//! Scalar abstraction shared by the numerical core.

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar accepted by the generic routines (`f32` or `f64`).
pub trait Real:
    RealField + Copy + Default + FromPrimitive + ToPrimitive
{
    /// Machine epsilon of the type.
    fn eps() -> Self;
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

/// Convert an `f64` literal into `T`.
#[inline]
pub fn c<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Convert back to `f64` (always succeeds for the supported types).
#[inline]
pub fn f<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub type Cx<T> = Complex<T>;

#[inline]
pub fn cx<T: Real>(re: T, im: T) -> Cx<T> {
    Complex::new(re, im)
}

#[inline]
pub fn czero<T: Real>() -> Cx<T> {
    Complex::new(T::zero(), T::zero())
}

/// e^{-i·theta}
#[inline]
pub fn phase<T: Real>(theta: T) -> Cx<T> {
    Complex::new(theta.clone().cos(), -theta.sin())
}
