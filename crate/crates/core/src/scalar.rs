//! Scalar abstraction shared by all numerical modules.

use nalgebra::{Complex, RealField};
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Real floating point type the simulation is generic over (`f32` or `f64`).
pub trait Real: RealField + FloatConst + FromPrimitive + ToPrimitive + Copy {
    /// Lossy conversion from an `f64` literal or parameter.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every supported scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable in every supported scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over the scalar type.
pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn cr<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

#[inline]
pub(crate) fn ci<T: Real>(im: T) -> C<T> {
    Complex::new(T::zero(), im)
}

/// `2π` in the scalar type.
#[inline]
pub(crate) fn two_pi<T: Real>() -> T {
    T::TAU()
}

/// `|z|`
#[inline]
pub(crate) fn modulus<T: Real>(z: C<T>) -> T {
    z.norm_sqr().sqrt()
}
