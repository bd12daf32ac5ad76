//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the solvers are generic over (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerically stable `ln(e^a + e^b)`; `-inf` acts as the additive zero.
#[inline]
pub fn log_add_exp<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Running sum of nonnegative terms kept in the log domain.
///
/// Carleman weights `e^{2 s phi}` routinely sit below the smallest
/// representable float, so weighted integrals are accumulated as logs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSum<T> {
    log: T,
}

impl<T: Real> Default for LogSum<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> LogSum<T> {
    pub fn zero() -> Self {
        Self {
            log: T::neg_infinity(),
        }
    }

    pub fn from_log(log: T) -> Self {
        Self { log }
    }

    /// Adds `exp(log_term)`.
    #[inline]
    pub fn add_log(&mut self, log_term: T) {
        self.log = log_add_exp(self.log, log_term);
    }

    /// Adds `weight * exp(log_factor) * value^2` with `weight > 0`.
    #[inline]
    pub fn add_weighted_square(&mut self, log_weight: T, log_factor: T, value: T) {
        if value == T::zero() {
            return;
        }
        self.add_log(log_weight + log_factor + T::lit(2.0) * value.abs().ln());
    }

    pub fn merge(&mut self, other: Self) {
        self.add_log(other.log);
    }

    pub fn log(&self) -> T {
        self.log
    }

    pub fn is_zero(&self) -> bool {
        self.log == T::neg_infinity()
    }

    /// Linear-domain value; underflows to zero when the log is very negative.
    pub fn value(&self) -> T {
        self.log.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_matches_direct_sum() {
        let a = 2.0_f64.ln();
        let b = 3.0_f64.ln();
        assert!((log_add_exp(a, b) - 5.0_f64.ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, b), b);
    }

    #[test]
    fn log_sum_survives_underflow() {
        let mut s = LogSum::<f64>::zero();
        s.add_weighted_square(0.0, -20_000.0, 2.0);
        s.add_weighted_square(0.0, -20_000.0, 2.0);
        assert_eq!(s.value(), 0.0);
        assert!((s.log() - (-20_000.0 + 8.0_f64.ln())).abs() < 1e-9);
    }
}
