use core::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Forward-mode dual number carrying one directional derivative.
///
/// The component type is itself a [`Scalar`], so `Dual<f64>` gives plain
/// forward mode and `Dual<Var>` records tangent arithmetic as graph nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub primal: T,
    pub tangent: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(primal: T, tangent: T) -> Self {
        Self { primal, tangent }
    }

    /// A dual with zero tangent.
    pub fn constant(primal: T) -> Self {
        Self {
            primal,
            tangent: primal.lift(0.0),
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.primal + rhs.primal, self.tangent + rhs.tangent)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.primal - rhs.primal, self.tangent - rhs.tangent)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual::new(
            self.primal * rhs.primal,
            self.primal * rhs.tangent + self.tangent * rhs.primal,
        )
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.primal, -self.tangent)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn lift(&self, c: f64) -> Self {
        Dual::constant(self.primal.lift(c))
    }

    fn value(&self) -> f64 {
        self.primal.value()
    }

    fn recip(self) -> Self {
        let r = self.primal.recip();
        Dual::new(r, -(self.tangent * r * r))
    }

    fn powf(self, exponent: f64) -> Self {
        let p = self.primal.powf(exponent);
        let d = self.primal.powf(exponent - 1.0).scale(exponent);
        Dual::new(p, self.tangent * d)
    }

    fn exp(self) -> Self {
        let e = self.primal.exp();
        Dual::new(e, self.tangent * e)
    }

    fn ln(self) -> Self {
        Dual::new(self.primal.ln(), self.tangent * self.primal.recip())
    }

    fn sin(self) -> Self {
        Dual::new(self.primal.sin(), self.tangent * self.primal.cos())
    }

    fn cos(self) -> Self {
        Dual::new(self.primal.cos(), -(self.tangent * self.primal.sin()))
    }

    fn tanh(self) -> Self {
        let t = self.primal.tanh();
        Dual::new(t, self.tangent * (t.lift(1.0) - t * t))
    }

    fn sigmoid(self) -> Self {
        let s = self.primal.sigmoid();
        Dual::new(s, self.tangent * s * (s.lift(1.0) - s))
    }
}
