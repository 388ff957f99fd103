//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type: `f32` or `f64`.
///
/// On-disk formats are always little-endian `f32`; values of other widths
/// are converted at the I/O boundary.
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
    + 'static
{
    /// Lossy conversion from `f64` (rounds to nearest for `f32`).
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Squared Euclidean distance, element differences taken in `T` and
/// accumulated in `f64`.
#[inline]
pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = (x - y).as_f64();
        acc += d * d;
    }
    acc
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x.as_f64() * y.as_f64())
        .sum()
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> f64 {
    a.iter()
        .map(|&x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Divides `v` by its L2 norm in place. Returns `false` (leaving `v`
/// untouched) when the norm is zero or not finite.
pub fn l2_normalize<T: Scalar>(v: &mut [T]) -> bool {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    for x in v.iter_mut() {
        *x = T::of(x.as_f64() / n);
    }
    true
}

pub fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}
