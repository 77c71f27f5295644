//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `max(tol, 64·ε)`: a tolerance that is still meaningful at this precision.
    #[inline]
    fn tol(tol: f64) -> Self {
        let floor = Self::epsilon() * Self::lit(64.0);
        Self::lit(tol).max(floor)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `(e^{aτ} − 1)/a`, continuous at `a = 0` where it equals `τ`.
pub fn expm1_div<S: Scalar>(a: S, tau: S) -> S {
    let x = a * tau;
    if x.abs() < S::lit(1e-8) {
        tau * (S::one() + x / S::lit(2.0))
    } else {
        x.exp_m1() / a
    }
}

/// `(e^{aτ} − 1 − aτ)/a²`, continuous at `a = 0` where it equals `τ²/2`.
pub fn expm1_div2<S: Scalar>(a: S, tau: S) -> S {
    let x = a * tau;
    if x.abs() < S::lit(1e-4) {
        let half = S::lit(0.5);
        let sixth = S::lit(1.0 / 6.0);
        let twenty_fourth = S::lit(1.0 / 24.0);
        tau * tau * (half + x * (sixth + x * twenty_fourth))
    } else {
        (x.exp_m1() - x) / (a * a)
    }
}
