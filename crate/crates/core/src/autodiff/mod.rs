//! Small scalar automatic differentiation.
//!
//! Three evaluation modes share one generic [`Scalar`] interface: plain
//! `f64`, forward-mode [`Dual`] numbers, and reverse-mode [`Graph`] nodes.
//! Nesting `Dual<Var>` records forward-mode tangent arithmetic as graph
//! nodes, which is how [`divergence`] yields a quantity that can itself be
//! differentiated with respect to the parameters of a vector field.

mod dual;
mod graph;
mod scalar;

use alloc::vec::Vec;

pub use dual::Dual;
pub use graph::{Graph, Var};
pub use scalar::{dot, sum, Scalar};

use crate::error::{Error, Result};

/// A parameterised map `R^dim_in -> R^dim_out` evaluable over any [`Scalar`].
pub trait Field {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    /// Flat parameter vector in the order `apply` consumes it.
    fn parameters(&self) -> &[f64];
    /// Evaluates the field at `x` with the given parameter values.
    fn apply<S: Scalar>(&self, params: &[S], x: &[S]) -> Vec<S>;
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Jacobian-vector product `J(point) * tangent` from one forward pass.
pub fn jvp<F>(field: F, point: &[f64], tangent: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[Dual<f64>]) -> Vec<Dual<f64>>,
{
    check_len(point.len(), tangent.len())?;
    let x: Vec<_> = point
        .iter()
        .zip(tangent)
        .map(|(&p, &t)| Dual::new(p, t))
        .collect();
    Ok(field(&x).into_iter().map(|d| d.tangent).collect())
}

/// `sum_i d field_i / d x_i` at `point`, recorded into `graph`.
///
/// Runs one forward-mode pass per coordinate with basis tangents. Every
/// tangent operation becomes a graph node, so the result can be passed to
/// [`Graph::grad`] with respect to `params`.
pub fn divergence<'g, F: Field>(
    graph: &'g Graph,
    field: &F,
    params: &[Var<'g>],
    point: &[f64],
) -> Result<Var<'g>> {
    let dim = field.dim_in();
    check_len(dim, field.dim_out())?;
    check_len(dim, point.len())?;
    check_len(field.parameters().len(), params.len())?;

    let zero = graph.constant(0.0);
    let one = graph.constant(1.0);
    let inputs: Vec<Var<'g>> = point.iter().map(|&v| graph.input(v)).collect();
    let dual_params: Vec<Dual<Var<'g>>> = params.iter().map(|&p| Dual::new(p, zero)).collect();

    let mut diagonal = Vec::with_capacity(dim);
    for i in 0..dim {
        let x: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(j, &v)| Dual::new(v, if i == j { one } else { zero }))
            .collect();
        let out = field.apply(&dual_params, &x);
        diagonal.push(out[i].tangent);
    }
    Ok(graph.sum(&diagonal))
}

/// Numerical divergence through `dim` forward passes with `f64` duals.
pub fn divergence_value<F: Field>(field: &F, point: &[f64]) -> Result<f64> {
    let dim = field.dim_in();
    check_len(dim, field.dim_out())?;
    check_len(dim, point.len())?;
    let params: Vec<Dual<f64>> = field.parameters().iter().map(|&p| Dual::constant(p)).collect();
    let mut total = 0.0;
    for i in 0..dim {
        let x: Vec<_> = point
            .iter()
            .enumerate()
            .map(|(j, &v)| Dual::new(v, if i == j { 1.0 } else { 0.0 }))
            .collect();
        total += field.apply(&params, &x)[i].tangent;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn square_and_sine() {
        let g = Graph::new();
        let x = g.parameter(3.0);
        let y = x * x;
        assert_eq!(g.grad(y, &[x]), vec![6.0]);

        let g = Graph::new();
        let x = g.parameter(0.0);
        let y = x.sin();
        assert_eq!(g.grad(y, &[x]), vec![1.0]);
    }

    #[test]
    fn log_sigmoid_matches_finite_difference() {
        let g = Graph::new();
        let x = g.parameter(0.7);
        let y = x.sigmoid().ln();
        let ad = g.grad(y, &[x])[0];
        let fd = central_diff(|v| Scalar::ln(Scalar::sigmoid(v)), 0.7, 1e-5);
        assert!(rel_err(ad, fd) < 1e-6, "{ad} vs {fd}");
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let g = Graph::new();
        let x = g.parameter(2.0);
        let y = x * x;
        let late = g.parameter(5.0);
        let unused = g.parameter(1.0);
        assert_eq!(g.grad(y, &[x, late, unused]), vec![4.0, 0.0, 0.0]);
    }

    #[test]
    fn nan_propagates() {
        let g = Graph::new();
        let x = g.parameter(-1.0);
        let y = x.ln() * x;
        assert!(y.value().is_nan());
        assert!(g.grad(y, &[x])[0].is_nan());
    }

    #[test]
    fn sum_and_dot_nodes() {
        let g = Graph::new();
        let a: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&v| g.parameter(v)).collect();
        let b: Vec<_> = [4.0, 5.0, 6.0].iter().map(|&v| g.parameter(v)).collect();
        let d = g.dot(&a, &b);
        assert_eq!(d.value(), 32.0);
        assert_eq!(g.grad(d, &a), vec![4.0, 5.0, 6.0]);
        let s = g.sum(&b);
        assert_eq!(g.grad(s, &b), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn recompute_is_deterministic() {
        let g = Graph::new();
        let x = g.input(0.3);
        let w = g.parameter(1.7);
        let y = (x * w).tanh() + (x.powf(2.5) / w).exp();
        let before = y.value();
        g.set_leaf(x, 0.9);
        g.recompute();
        assert_ne!(y.value(), before);
        g.set_leaf(x, 0.3);
        g.recompute();
        assert_eq!(y.value().to_bits(), before.to_bits());
    }

    #[test]
    fn jvp_identity_and_hand_jacobian() {
        let id = |x: &[Dual<f64>]| x.to_vec();
        assert_eq!(jvp(id, &[4.0, -2.0, 1.0], &[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);

        let f = |x: &[Dual<f64>]| vec![x[0] * x[1], x[0] + x[1]];
        assert_eq!(jvp(f, &[2.0, 3.0], &[1.0, 0.0]).unwrap(), vec![3.0, 1.0]);
        assert!(matches!(
            jvp(f, &[2.0, 3.0], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    struct Identity(usize);
    impl Field for Identity {
        fn dim_in(&self) -> usize {
            self.0
        }
        fn dim_out(&self) -> usize {
            self.0
        }
        fn parameters(&self) -> &[f64] {
            &[]
        }
        fn apply<S: Scalar>(&self, _: &[S], x: &[S]) -> Vec<S> {
            x.to_vec()
        }
    }

    struct Swap;
    impl Field for Swap {
        fn dim_in(&self) -> usize {
            2
        }
        fn dim_out(&self) -> usize {
            2
        }
        fn parameters(&self) -> &[f64] {
            &[]
        }
        fn apply<S: Scalar>(&self, _: &[S], x: &[S]) -> Vec<S> {
            vec![x[1], x[0]]
        }
    }

    struct NonSquare;
    impl Field for NonSquare {
        fn dim_in(&self) -> usize {
            2
        }
        fn dim_out(&self) -> usize {
            3
        }
        fn parameters(&self) -> &[f64] {
            &[]
        }
        fn apply<S: Scalar>(&self, _: &[S], x: &[S]) -> Vec<S> {
            vec![x[0], x[1], x[0]]
        }
    }

    #[test]
    fn divergence_of_simple_fields() {
        let g = Graph::new();
        let d = divergence(&g, &Identity(4), &[], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(d.value(), 4.0);
        let d = divergence(&g, &Swap, &[], &[0.5, -1.0]).unwrap();
        assert_eq!(d.value(), 0.0);
        assert!(divergence(&g, &NonSquare, &[], &[0.0, 0.0]).is_err());
        assert_eq!(divergence_value(&Identity(3), &[1.0, 2.0, 3.0]).unwrap(), 3.0);
    }

    // Every primitive, reverse gradient vs central differences.
    fn primitives() -> Vec<(&'static str, fn(f64) -> f64, f64, f64)> {
        // (name, f64 evaluation, lower, upper) of the sampling interval
        vec![
            ("exp", |x| Scalar::exp(x), -3.0, 3.0),
            ("ln", |x| Scalar::ln(x), 0.1, 5.0),
            ("sin", |x| Scalar::sin(x), -4.0, 4.0),
            ("tanh", |x| Scalar::tanh(x), -3.0, 3.0),
            ("sigmoid", |x| Scalar::sigmoid(x), -6.0, 6.0),
            ("recip", |x| Scalar::recip(x), 0.2, 4.0),
            ("powf", |x| Scalar::powf(x, 2.5), 0.2, 4.0),
            ("cube", |x| x * x * x, -2.0, 2.0),
            ("neg", |x| -x, -2.0, 2.0),
            ("cos", |x| Scalar::cos(x), -4.0, 4.0),
        ]
    }

    fn graph_eval(name: &str, v: f64) -> (f64, f64) {
        let g = Graph::new();
        let x = g.parameter(v);
        let y = match name {
            "exp" => x.exp(),
            "ln" => x.ln(),
            "sin" => x.sin(),
            "tanh" => x.tanh(),
            "sigmoid" => x.sigmoid(),
            "recip" => x.recip(),
            "powf" => x.powf(2.5),
            "cube" => x * x * x,
            "neg" => -x,
            "cos" => x.cos(),
            _ => unreachable!(),
        };
        (y.value(), g.grad(y, &[x])[0])
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (name, f, lo, hi) in primitives() {
            for _ in 0..100 {
                let x = rng.random_range(lo..hi);
                let (value, ad) = graph_eval(name, x);
                assert!((value - f(x)).abs() <= 1e-14 * f(x).abs().max(1.0), "{name} primal at {x}");
                let fd = central_diff(f, x, 1e-5);
                let err = (ad - fd).abs() / fd.abs().max(1e-3);
                assert!(err < 1e-5, "{name} at {x}: {ad} vs {fd}");
                // forward mode agrees with reverse mode
                let fwd = jvp(|d| vec![match name {
                    "exp" => d[0].exp(),
                    "ln" => d[0].ln(),
                    "sin" => d[0].sin(),
                    "tanh" => d[0].tanh(),
                    "sigmoid" => d[0].sigmoid(),
                    "recip" => d[0].recip(),
                    "powf" => d[0].powf(2.5),
                    "cube" => d[0] * d[0] * d[0],
                    "neg" => -d[0],
                    "cos" => d[0].cos(),
                    _ => unreachable!(),
                }], &[x], &[1.0]).unwrap()[0];
                assert!((fwd - ad).abs() <= 1e-12 * ad.abs().max(1.0), "{name}");
            }
        }
    }

    proptest! {
        #[test]
        fn dual_product_rule(a in -10.0..10.0f64, da in -10.0..10.0f64, b in -10.0..10.0f64, db in -10.0..10.0f64) {
            let p = Dual::new(a, da) * Dual::new(b, db);
            prop_assert_eq!(p.primal, a * b);
            prop_assert_eq!(p.tangent, a * db + da * b);
        }
    }
}
