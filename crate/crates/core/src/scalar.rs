use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use num_traits::Zero;

/// Field of the state vector entries: `f64` or `Complex64`.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Zero
    + Add<Output = Self>
    + Sub<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
    + AddAssign
    + SubAssign
    + 'static
{
    const IS_COMPLEX: bool;

    fn modulus(self) -> f64;
    fn is_finite(self) -> bool;
    fn re(self) -> f64;
    fn im(self) -> f64;
}

impl Scalar for f64 {
    const IS_COMPLEX: bool = false;

    #[inline]
    fn modulus(self) -> f64 {
        self.abs()
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn im(self) -> f64 {
        0.0
    }
}

impl Scalar for Complex64 {
    const IS_COMPLEX: bool = true;

    #[inline]
    fn modulus(self) -> f64 {
        self.norm()
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn im(self) -> f64 {
        self.im
    }
}

/// Max-norm over all components; complex entries contribute their modulus.
/// NaN entries propagate so callers can detect them.
pub fn max_norm<T: Scalar>(v: &[T]) -> f64 {
    let mut m = 0.0_f64;
    for x in v {
        let a = x.modulus();
        if a.is_nan() {
            return f64::NAN;
        }
        m = m.max(a);
    }
    m
}

/// `‖a − b‖∞`
pub fn max_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut m = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y).modulus();
        if d.is_nan() {
            return f64::NAN;
        }
        m = m.max(d);
    }
    m
}

pub fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Scalar>(a: f64, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += *xi * a;
    }
}
