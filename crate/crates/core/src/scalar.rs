//! Floating point abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the model is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoint headers.
    const DTYPE: &'static str;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    fn digamma(self) -> Self {
        Self::c(statrs::function::gamma::digamma(self.f64()))
    }

    fn ln_gamma(self) -> Self {
        Self::c(statrs::function::gamma::ln_gamma(self.f64()))
    }

    /// `ln(1 + e^x)` without overflow.
    #[inline]
    fn softplus(self) -> Self {
        if self > Self::c(30.0) {
            self
        } else {
            self.exp().ln_1p()
        }
    }

    /// Inverse of [`Scalar::softplus`], defined for positive inputs.
    #[inline]
    fn softplus_inv(self) -> Self {
        if self > Self::c(30.0) {
            self
        } else {
            self.exp_m1().ln()
        }
    }

    /// Derivative of softplus.
    #[inline]
    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// `ln k!` for `k = 0..n`.
pub fn log_factorials<T: Scalar>(n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    let mut acc = T::zero();
    for k in 0..n {
        if k > 1 {
            acc += T::c(k as f64).ln();
        }
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_roundtrip() {
        for &x in &[1e-6_f64, 0.1, 1.0, 5.0, 40.0] {
            assert!((x.softplus_inv().softplus() - x).abs() < 1e-12 * x.max(1.0));
        }
        assert!((0.0f64.softplus() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn factorials() {
        let lf = log_factorials::<f64>(6);
        assert_eq!(lf[0], 0.0);
        assert_eq!(lf[1], 0.0);
        assert!((lf[5] - 120f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lse_handles_neg_inf() {
        assert_eq!(log_sum_exp::<f64>(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[0.0f64, 0.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }
}
