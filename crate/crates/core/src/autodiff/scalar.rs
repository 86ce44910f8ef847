use core::ops::{Add, Div, Mul, Neg, Sub};
use num_traits::Float;

/// Arithmetic shared by plain floats, forward-mode duals and graph nodes.
///
/// Generic code written against `Scalar` can be evaluated numerically,
/// differentiated in forward mode, or recorded into a [`Graph`](super::Graph)
/// for reverse accumulation, including nestings such as `Dual<Var>`.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant living in the same context as `self`.
    fn lift(&self, c: f64) -> Self;
    /// Primal value.
    fn value(&self) -> f64;

    fn recip(self) -> Self;
    fn powf(self, exponent: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;

    fn cos(self) -> Self {
        (self + self.lift(core::f64::consts::FRAC_PI_2)).sin()
    }

    fn scale(self, c: f64) -> Self {
        self * self.lift(c)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + Float::exp(-x))
    } else {
        let e = Float::exp(x);
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn powf(self, exponent: f64) -> Self {
        Float::powf(self, exponent)
    }
    fn exp(self) -> Self {
        Float::exp(self)
    }
    fn ln(self) -> Self {
        Float::ln(self)
    }
    fn sin(self) -> Self {
        Float::sin(self)
    }
    fn cos(self) -> Self {
        Float::cos(self)
    }
    fn tanh(self) -> Self {
        Float::tanh(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
}

/// Sum of a slice; `None` for an empty slice since there is no context to lift zero into.
pub fn sum<S: Scalar>(xs: &[S]) -> Option<S> {
    let (first, rest) = xs.split_first()?;
    Some(rest.iter().fold(*first, |acc, &x| acc + x))
}

/// Inner product of two equally long, nonempty slices.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> Option<S> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let mut acc = a[0] * b[0];
    for (&x, &y) in a[1..].iter().zip(&b[1..]) {
        acc = acc + x * y;
    }
    Some(acc)
}
