//! Scalar abstraction shared by every network kernel.
//!
//! All forward and backward passes are written once, generic over [`Scalar`].
//! Running them on `f64` gives ordinary values and gradients; running them on
//! [`Dual`] propagates a tangent alongside, which turns a reverse-mode gradient
//! into a forward-over-reverse Hessian-vector product. The meta-loss outer
//! gradient is computed that way.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// 2 / sqrt(pi)
const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

pub trait Scalar:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    fn from_f64(v: f64) -> Self;
    /// Primal part.
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn erf(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }

    /// Logistic function, evaluated without overflow for either sign.
    fn sigmoid(self) -> Self {
        if self.value() >= 0.0 {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// `ln(1 + e^x)`, evaluated without overflow for either sign.
    fn softplus(self) -> Self {
        if self.value() > 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// Exact (erf-based) GELU.
    fn gelu(self) -> Self {
        self * (Self::one() + self.scale(FRAC_1_SQRT_2).erf()).scale(0.5)
    }

    /// Derivative of [`Scalar::gelu`]: Φ(x) + x·φ(x).
    fn gelu_grad(self) -> Self {
        let cdf = (Self::one() + self.scale(FRAC_1_SQRT_2).erf()).scale(0.5);
        let pdf = (self * self).scale(-0.5).exp().scale(FRAC_2_SQRT_PI * FRAC_1_SQRT_2 * 0.5);
        cdf + self * pdf
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// First-order forward-mode dual number `v + d·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub const fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }

    pub const fn constant(v: f64) -> Self {
        Self { v, d: 0.0 }
    }
}

impl From<f64> for Dual {
    fn from(v: f64) -> Self {
        Dual::constant(v)
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Dual::new(q, (self.d - q * o.d) / o.v)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.v, -self.d)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.v += o.v;
        self.d += o.d;
    }
}

impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.v -= o.v;
        self.d -= o.d;
    }
}

impl Scalar for Dual {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        Dual::new(self.v * k, self.d * k)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual::new(e, self.d * e)
    }
    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.v.ln(), self.d / self.v)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        Dual::new(self.v.ln_1p(), self.d / (1.0 + self.v))
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Dual::new(s, self.d / (2.0 * s))
    }
    #[inline]
    fn erf(self) -> Self {
        Dual::new(libm::erf(self.v), self.d * FRAC_2_SQRT_PI * (-self.v * self.v).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn derivative(f: impl Fn(Dual) -> Dual, x: f64) -> f64 {
        f(Dual::new(x, 1.0)).d
    }

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    #[allow(clippy::type_complexity)]
    fn dual_derivatives_match_finite_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let pairs: [(fn(Dual) -> Dual, fn(f64) -> f64); 4] = [
                (|d| d.gelu(), |v| v.gelu()),
                (|d| d.softplus(), |v| v.softplus()),
                (|d| d.sigmoid(), |v| v.sigmoid()),
                (
                    |d| d.erf() * d.exp() / (d * d + Dual::one()).sqrt(),
                    |v| libm::erf(v) * v.exp() / (v * v + 1.0).sqrt(),
                ),
            ];
            for (fd, fv) in pairs {
                let a = derivative(fd, x);
                let n = central(fv, x);
                assert!((a - n).abs() < 1e-7, "x={x}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn gelu_grad_matches_dual() {
        for &x in &[-4.0, -1.0, 0.0, 0.3, 1.7] {
            let a = derivative(|d| d.gelu(), x);
            assert!((a - x.gelu_grad()).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((1000.0f64.softplus() - 1000.0).abs() < 1e-12);
        assert!((-1000.0f64).softplus() >= 0.0);
        assert!((0.0f64.softplus() - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
