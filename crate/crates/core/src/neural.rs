//! Neural trial functions and the constrained training objective.
//!
//! The trial function is a multilayer perceptron `Φ(θ; w)`. Its control
//! variate needs `∇θ·Φ`, and training needs the gradient of that divergence
//! with respect to `w`. [`Mlp`] implements both directly: one forward pass
//! propagates the input Jacobian alongside the activations, and a matching
//! reverse pass differentiates through it. [`graph_cncv_loss_gradient`]
//! computes the same gradient through the generic autodiff graph and is
//! kept as a reference.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::{self, Field, Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::samplers::{mean_and_variance, SampleBatch};
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::stein::{CvModel, CvPayload, FitFlags, TrialFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Sigmoid => z.sigmoid(),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Value, first and second derivative.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Sigmoid => {
                let s = Scalar::sigmoid(z);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
            Activation::Tanh => {
                let t = Float::tanh(z);
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
        }
    }
}

/// Fully connected network `R^D -> R^D` with affine output.
///
/// Inputs are standardised as `(θ - shift) / scale` and outputs multiplied
/// elementwise by `out_scale`; these are fixed constants, not trained.
/// Parameters are stored flat, layer by layer: the row-major weight matrix
/// (`fan_out x fan_in`) followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    in_shift: Vec<f64>,
    in_scale: Vec<f64>,
    out_scale: Vec<f64>,
}

impl Mlp {
    /// A network with all parameters zero.
    pub fn new(dim: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        if dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(dim);
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let n_params = widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self {
            widths,
            activation,
            params: vec![0.0; n_params],
            in_shift: vec![0.0; dim],
            in_scale: vec![1.0; dim],
            out_scale: vec![1.0; dim],
        })
    }

    /// Reassembles a network from stored parts.
    pub fn from_parts(
        widths: Vec<usize>,
        activation: Activation,
        params: Vec<f64>,
        in_shift: Vec<f64>,
        in_scale: Vec<f64>,
        out_scale: Vec<f64>,
    ) -> Result<Self> {
        if widths.len() < 2 || widths[0] != widths[widths.len() - 1] {
            return Err(Error::InvalidConfig("network must map R^D to R^D".into()));
        }
        let mut net = Self::new(widths[0], &widths[1..widths.len() - 1], activation)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        net.set_standardization(in_shift, in_scale, out_scale)?;
        Ok(net)
    }

    /// A single affine layer initialised to the identity map.
    pub fn identity(dim: usize) -> Self {
        let mut net = Self::new(dim.max(1), &[], Activation::Sigmoid).expect("positive dim");
        let d = net.dim();
        for i in 0..d {
            net.params[i * d + i] = 1.0;
        }
        net
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation of weights and biases.
    pub fn init_fan_in(&mut self, rng: &mut Rng) {
        for l in 1..self.widths.len() {
            let bound = 1.0 / (self.widths[l - 1] as f64).sqrt();
            let (w, b) = self.layer_range(l);
            for p in &mut self.params[w.start..b.end] {
                *p = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn set_standardization(&mut self, in_shift: Vec<f64>, in_scale: Vec<f64>, out_scale: Vec<f64>) -> Result<()> {
        let d = self.dim();
        for v in [&in_shift, &in_scale, &out_scale] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        if in_scale.iter().chain(&out_scale).any(|s| !(s.abs() > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("standardisation scales must be finite and nonzero".into()));
        }
        self.in_shift = in_shift;
        self.in_scale = in_scale;
        self.out_scale = out_scale;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.widths[0]
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn in_shift(&self) -> &[f64] {
        &self.in_shift
    }

    pub fn in_scale(&self) -> &[f64] {
        &self.in_scale
    }

    pub fn out_scale(&self) -> &[f64] {
        &self.out_scale
    }

    fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Parameter ranges of the weight matrix and bias of layer `l` (1-based).
    fn layer_range(&self, l: usize) -> (core::ops::Range<usize>, core::ops::Range<usize>) {
        let mut start = 0;
        for k in 1..l {
            start += self.widths[k] * (self.widths[k - 1] + 1);
        }
        let w_end = start + self.widths[l] * self.widths[l - 1];
        (start..w_end, w_end..w_end + self.widths[l])
    }

    /// `Φ(θ)`.
    pub fn forward(&self, theta: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::new(self);
        self.forward_sample(theta, &mut ws);
        ws.phi
    }

    /// The Stein control variate of this network at every row of `batch`.
    pub fn stein_values(&self, batch: &SampleBatch) -> Vec<f64> {
        let mut ws = Workspace::new(self);
        (0..batch.len())
            .map(|i| self.stein_sample(batch.theta(i), batch.score(i), &mut ws))
            .collect()
    }

    fn stein_sample(&self, theta: &[f64], score: &[f64], ws: &mut Workspace) -> f64 {
        let div = self.forward_sample(theta, ws);
        div + ws.phi.iter().zip(score).map(|(p, s)| p * s).sum::<f64>()
    }

    /// Forward pass carrying `T_l = ∂x_l/∂θ` for every hidden layer.
    /// Leaves `Φ` in `ws.phi` and returns `∇θ·Φ`.
    fn forward_sample(&self, theta: &[f64], ws: &mut Workspace) -> f64 {
        let d = self.dim();
        let n_layers = self.n_layers();
        for j in 0..d {
            ws.x[0][j] = (theta[j] - self.in_shift[j]) / self.in_scale[j];
        }
        for l in 1..n_layers {
            let (n_out, n_in) = (self.widths[l], self.widths[l - 1]);
            let (wr, br) = self.layer_range(l);
            let w = &self.params[wr];
            let b = &self.params[br];
            let (prev, rest) = ws.x.split_at_mut(l);
            let x_in = &prev[l - 1];
            let x_out = &mut rest[0];
            for k in 0..n_out {
                let row = &w[k * n_in..(k + 1) * n_in];
                let z = b[k] + row.iter().zip(x_in.iter()).map(|(a, x)| a * x).sum::<f64>();
                let (s, d1, d2) = self.activation.eval(z);
                x_out[k] = s;
                ws.d1[l][k] = d1;
                ws.d2[l][k] = d2;
            }
            let (t_prev, t_rest) = ws.t.split_at_mut(l);
            let zp = &mut ws.zp[l];
            if l == 1 {
                for k in 0..n_out {
                    for j in 0..d {
                        zp[k * d + j] = w[k * n_in + j] / self.in_scale[j];
                    }
                }
            } else {
                let t_in = &t_prev[l - 1];
                zp.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..n_out {
                    let zp_row = &mut zp[k * d..(k + 1) * d];
                    for m in 0..n_in {
                        let a = w[k * n_in + m];
                        for (z, t) in zp_row.iter_mut().zip(&t_in[m * d..(m + 1) * d]) {
                            *z += a * t;
                        }
                    }
                }
            }
            let t_out = &mut t_rest[0];
            for k in 0..n_out {
                let d1 = ws.d1[l][k];
                for j in 0..d {
                    t_out[k * d + j] = d1 * zp[k * d + j];
                }
            }
        }

        let (wr, br) = self.layer_range(n_layers);
        let w = &self.params[wr];
        let b = &self.params[br];
        let n_in = self.widths[n_layers - 1];
        let x_in = &ws.x[n_layers - 1];
        let mut div = 0.0;
        for i in 0..d {
            let row = &w[i * n_in..(i + 1) * n_in];
            let y = b[i] + row.iter().zip(x_in.iter()).map(|(a, x)| a * x).sum::<f64>();
            ws.phi[i] = self.out_scale[i] * y;
            let diag = if n_layers == 1 {
                row[i] / self.in_scale[i]
            } else {
                let t = &ws.t[n_layers - 1];
                row.iter().enumerate().map(|(k, a)| a * t[k * d + i]).sum::<f64>()
            };
            div += self.out_scale[i] * diag;
        }
        div
    }

    /// Accumulates `g_bar * ∂g/∂w` into `grad` for the sample last passed
    /// to [`Mlp::forward_sample`].
    fn backward_sample(&self, score: &[f64], g_bar: f64, ws: &mut Workspace, grad: &mut [f64]) {
        let d = self.dim();
        let n_layers = self.n_layers();
        for i in 0..d {
            ws.y_bar[i] = g_bar * self.out_scale[i] * score[i];
        }
        let (wr, br) = self.layer_range(n_layers);
        let n_in = self.widths[n_layers - 1];
        {
            let x_in = &ws.x[n_layers - 1];
            for i in 0..d {
                let yb = ws.y_bar[i];
                grad[br.start + i] += yb;
                let gw = &mut grad[wr.start + i * n_in..wr.start + (i + 1) * n_in];
                for (g, x) in gw.iter_mut().zip(x_in.iter()) {
                    *g += yb * x;
                }
                let diag_bar = g_bar * self.out_scale[i];
                if n_layers == 1 {
                    grad[wr.start + i * n_in + i] += diag_bar / self.in_scale[i];
                } else {
                    let t = &ws.t[n_layers - 1];
                    for k in 0..n_in {
                        gw[k] += diag_bar * t[k * d + i];
                    }
                }
            }
        }
        if n_layers == 1 {
            return;
        }

        let w = &self.params[wr];
        // Adjoints of the last hidden activations and their Jacobian.
        let x_bar = &mut ws.x_bar[..n_in];
        let t_bar = &mut ws.t_bar[..n_in * d];
        for k in 0..n_in {
            x_bar[k] = (0..d).map(|i| w[i * n_in + k] * ws.y_bar[i]).sum();
            for i in 0..d {
                t_bar[k * d + i] = g_bar * self.out_scale[i] * w[i * n_in + k];
            }
        }

        for l in (1..n_layers).rev() {
            let (n_out, n_in) = (self.widths[l], self.widths[l - 1]);
            let (wr, br) = self.layer_range(l);
            let zp = &ws.zp[l];
            let d1 = &ws.d1[l];
            let d2 = &ws.d2[l];
            let zp_bar = &mut ws.zp_bar[..n_out * d];
            let z_bar = &mut ws.z_bar[..n_out];
            for k in 0..n_out {
                let mut curvature = 0.0;
                for j in 0..d {
                    let tb = ws.t_bar[k * d + j];
                    zp_bar[k * d + j] = d1[k] * tb;
                    curvature += tb * zp[k * d + j];
                }
                z_bar[k] = d1[k] * ws.x_bar[k] + d2[k] * curvature;
                grad[br.start + k] += z_bar[k];
            }
            let x_in = &ws.x[l - 1];
            if l == 1 {
                for k in 0..n_out {
                    let gw = &mut grad[wr.start + k * n_in..wr.start + (k + 1) * n_in];
                    for j in 0..d {
                        gw[j] += z_bar[k] * x_in[j] + zp_bar[k * d + j] / self.in_scale[j];
                    }
                }
            } else {
                let w = &self.params[wr.clone()];
                let t_in = &ws.t[l - 1];
                for k in 0..n_out {
                    let zb_row = &zp_bar[k * d..(k + 1) * d];
                    let gw = &mut grad[wr.start + k * n_in..wr.start + (k + 1) * n_in];
                    for m in 0..n_in {
                        let t_row = &t_in[m * d..(m + 1) * d];
                        let s: f64 = zb_row.iter().zip(t_row).map(|(a, b)| a * b).sum();
                        gw[m] += z_bar[k] * x_in[m] + s;
                    }
                }
                let x_bar = &mut ws.x_bar[..n_in];
                let t_bar = &mut ws.t_bar[..n_in * d];
                x_bar.iter_mut().for_each(|v| *v = 0.0);
                t_bar.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..n_out {
                    let zb = z_bar[k];
                    let zb_row = &zp_bar[k * d..(k + 1) * d];
                    for m in 0..n_in {
                        let a = w[k * n_in + m];
                        x_bar[m] += a * zb;
                        for (t, z) in t_bar[m * d..(m + 1) * d].iter_mut().zip(zb_row) {
                            *t += a * z;
                        }
                    }
                }
            }
        }
    }
}

/// Scratch buffers for one network shape.
struct Workspace {
    x: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    zp: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
    phi: Vec<f64>,
    y_bar: Vec<f64>,
    x_bar: Vec<f64>,
    t_bar: Vec<f64>,
    z_bar: Vec<f64>,
    zp_bar: Vec<f64>,
}

impl Workspace {
    fn new(net: &Mlp) -> Self {
        let d = net.dim();
        let widest = net.widths.iter().copied().max().unwrap_or(d);
        let per_layer = |f: &dyn Fn(usize) -> usize| -> Vec<Vec<f64>> {
            net.widths[..net.widths.len() - 1]
                .iter()
                .map(|&w| vec![0.0; f(w)])
                .collect()
        };
        Self {
            x: per_layer(&|w| w),
            d1: per_layer(&|w| w),
            d2: per_layer(&|w| w),
            zp: per_layer(&|w| w * d),
            t: per_layer(&|w| w * d),
            phi: vec![0.0; d],
            y_bar: vec![0.0; d],
            x_bar: vec![0.0; widest],
            t_bar: vec![0.0; widest * d],
            z_bar: vec![0.0; widest],
            zp_bar: vec![0.0; widest * d],
        }
    }
}

impl Field for Mlp {
    fn dim_in(&self) -> usize {
        self.dim()
    }

    fn dim_out(&self) -> usize {
        self.dim()
    }

    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn apply<S: Scalar>(&self, params: &[S], x: &[S]) -> Vec<S> {
        let mut h: Vec<S> = x
            .iter()
            .enumerate()
            .map(|(j, &v)| (v - v.lift(self.in_shift[j])) * v.lift(1.0 / self.in_scale[j]))
            .collect();
        let n_layers = self.n_layers();
        for l in 1..=n_layers {
            let n_in = self.widths[l - 1];
            let (wr, br) = self.layer_range(l);
            let w = &params[wr];
            let b = &params[br];
            h = (0..self.widths[l])
                .map(|k| {
                    let z = (0..n_in).fold(b[k], |acc, j| acc + w[k * n_in + j] * h[j]);
                    if l < n_layers {
                        self.activation.apply(z)
                    } else {
                        z * z.lift(self.out_scale[k])
                    }
                })
                .collect();
        }
        h
    }
}

impl TrialFunction for Mlp {
    fn dim(&self) -> usize {
        Mlp::dim(self)
    }

    fn value(&self, theta: &[f64]) -> Vec<f64> {
        self.forward(theta)
    }

    fn divergence(&self, theta: &[f64]) -> f64 {
        let mut ws = Workspace::new(self);
        self.forward_sample(theta, &mut ws)
    }
}

/// Components of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// `fit + λ · regularizer`.
    pub total: f64,
    /// `(1/n) Σ (f + g - μ)²`.
    pub fit: f64,
    /// `(1/n) Σ g²`.
    pub regularizer: f64,
    pub mu: f64,
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Objective and gradients over the rows `indices` of `batch`.
/// Returns the breakdown, and adds the weight gradient into `grad`.
fn objective(
    net: &Mlp,
    batch: &SampleBatch,
    indices: &[usize],
    mu: f64,
    lambda: f64,
    ws: &mut Workspace,
    mut grad: Option<(&mut [f64], &mut f64)>,
) -> Result<LossBreakdown> {
    let n = indices.len() as f64;
    let mut fit = 0.0;
    let mut reg = 0.0;
    for &i in indices {
        let g = net.stein_sample(batch.theta(i), batch.score(i), ws);
        if !g.is_finite() {
            return Err(Error::NonFiniteControlVariate {
                sample: i,
                max_abs_weight: max_abs(&net.params),
            });
        }
        let residual = batch.f_values()[i] + g - mu;
        fit += residual * residual;
        reg += g * g;
        if let Some((w_grad, mu_grad)) = grad.as_mut() {
            let g_bar = 2.0 * (residual + lambda * g) / n;
            **mu_grad -= 2.0 * residual / n;
            net.backward_sample(batch.score(i), g_bar, ws, w_grad);
        }
    }
    let fit = fit / n;
    let regularizer = reg / n;
    Ok(LossBreakdown {
        total: fit + lambda * regularizer,
        fit,
        regularizer,
        mu,
    })
}

fn all_rows(batch: &SampleBatch) -> Vec<usize> {
    (0..batch.len()).collect()
}

/// Unconstrained objective `(1/n) Σ (f + g)²`.
pub fn ncv_loss(batch: &SampleBatch, net: &Mlp) -> Result<LossBreakdown> {
    let mut ws = Workspace::new(net);
    let loss = objective(net, batch, &all_rows(batch), 0.0, 0.0, &mut ws, None)?;
    Ok(LossBreakdown {
        regularizer: 0.0,
        ..loss
    })
}

/// Centred and regularised objective `(1/n) Σ [(f + g - μ)² + λ g²]`.
pub fn cncv_loss(batch: &SampleBatch, net: &Mlp, mu: f64, lambda: f64) -> Result<LossBreakdown> {
    let mut ws = Workspace::new(net);
    objective(net, batch, &all_rows(batch), mu, lambda, &mut ws, None)
}

/// [`cncv_loss`] with its gradient with respect to the weights and `μ`.
pub fn cncv_loss_gradient(
    batch: &SampleBatch,
    net: &Mlp,
    mu: f64,
    lambda: f64,
) -> Result<(LossBreakdown, Vec<f64>, f64)> {
    let mut ws = Workspace::new(net);
    let mut grad = vec![0.0; net.params.len()];
    let mut mu_grad = 0.0;
    let loss = objective(
        net,
        batch,
        &all_rows(batch),
        mu,
        lambda,
        &mut ws,
        Some((&mut grad, &mut mu_grad)),
    )?;
    Ok((loss, grad, mu_grad))
}

/// The same objective and gradient recorded through the autodiff graph,
/// with the divergence taken by forward-mode passes on graph nodes.
/// Slow; meant for verification on small networks.
pub fn graph_cncv_loss_gradient(
    batch: &SampleBatch,
    net: &Mlp,
    mu: f64,
    lambda: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    let graph = Graph::new();
    let params: Vec<Var<'_>> = net.params.iter().map(|&p| graph.parameter(p)).collect();
    let mu_var = graph.parameter(mu);
    let lambda_c = graph.constant(lambda);
    let mut terms = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let theta: Vec<Var<'_>> = batch.theta(i).iter().map(|&v| graph.input(v)).collect();
        let score: Vec<Var<'_>> = batch.score(i).iter().map(|&v| graph.constant(v)).collect();
        let phi = net.apply(&params, &theta);
        let div = autodiff::divergence(&graph, net, &params, batch.theta(i))?;
        let g = div + graph.dot(&phi, &score);
        let residual = graph.constant(batch.f_values()[i]) + g - mu_var;
        terms.push(residual * residual + lambda_c * g * g);
    }
    let total = graph.sum(&terms).scale(1.0 / batch.len() as f64);
    let mut wrt = params.clone();
    wrt.push(mu_var);
    let mut grad = graph.grad(total, &wrt);
    let mu_grad = grad.pop().unwrap_or(0.0);
    Ok((total.value(), grad, mu_grad))
}

/// How the offset `μ` is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuInit {
    Zero,
    /// `(1/n) Σ f(θ_i)`.
    SampleMean,
    /// Train with the larger `lambda` until the loss plateaus, keep `μ`,
    /// re-initialise the weights and train again with the configured `λ`.
    Pretrain { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Weight of the second-moment regulariser.
    pub lambda: f64,
    /// Learn `μ`; when false `μ` stays fixed at zero.
    pub centered: bool,
    pub mu_init: MuInit,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub seed: u64,
    /// Standardise inputs and scale outputs and `μ` from the training data.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![40, 40],
            activation: Activation::Sigmoid,
            lambda: 0.1,
            centered: true,
            mu_init: MuInit::SampleMean,
            optimizer: Optimizer::Sgd,
            learning_rate: 1e-3,
            epochs: 2000,
            minibatch: 64,
            seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        if let MuInit::Pretrain { lambda } = self.mu_init {
            if !(lambda > self.lambda) {
                return bad("pretraining lambda must exceed lambda");
            }
        }
        if !(self.learning_rate > 0.0) || self.minibatch == 0 || self.epochs == 0 {
            return bad("learning rate, minibatch and epochs must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

/// Relative loss change below which pretraining counts as converged.
pub const PLATEAU_TOLERANCE: f64 = 1e-4;
/// Window, in epochs, over which the plateau is measured.
pub const PLATEAU_WINDOW: usize = 50;

#[derive(Debug, Clone)]
pub struct TrainedCv {
    pub model: CvModel,
    /// Per-epoch mean minibatch objective of the main phase.
    pub loss_curve: Vec<LossBreakdown>,
    /// Same for the pretraining phase, if any.
    pub pretrain_curve: Vec<LossBreakdown>,
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                self.step += 1;
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + epsilon);
                }
            }
        }
    }
}

fn fresh_network(train: &SampleBatch, config: &TrainConfig, seed: u64, f_sd: f64) -> Result<Mlp> {
    let d = train.dim();
    let mut net = Mlp::new(d, &config.hidden, config.activation)?;
    net.init_fan_in(&mut rng_from_seed(seed));
    if config.standardize {
        let mut shift = vec![0.0; d];
        let mut scale = vec![1.0; d];
        let column: Vec<Vec<f64>> = (0..d)
            .map(|j| (0..train.len()).map(|i| train.theta(i)[j]).collect())
            .collect();
        for j in 0..d {
            let (m, v) = mean_and_variance(&column[j]);
            shift[j] = m;
            if v > 0.0 {
                scale[j] = v.sqrt();
            }
        }
        let out: Vec<f64> = scale.iter().map(|s| s * f_sd).collect();
        net.set_standardization(shift, scale, out)?;
    }
    Ok(net)
}

/// Runs one optimisation phase; returns the per-epoch loss curve.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    net: &mut Mlp,
    mu: &mut f64,
    mu_scale: f64,
    train: &SampleBatch,
    config: &TrainConfig,
    lambda: f64,
    rng: &mut Rng,
    stop_on_plateau: bool,
) -> Result<Vec<LossBreakdown>> {
    let n_w = net.params.len();
    let train_mu = config.centered;
    let mut ws = Workspace::new(net);
    // μ is optimised as μ / mu_scale so its step size matches the weights'.
    let mut packed: Vec<f64> = net.params.clone();
    packed.push(*mu / mu_scale);
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, packed.len());
    let mut grad = vec![0.0; packed.len()];

    let initial = objective(net, train, &all_rows(train), *mu, lambda, &mut ws, None)?.total;
    let mut order = all_rows(train);
    let mut curve: Vec<LossBreakdown> = Vec::with_capacity(config.epochs);
    let mut blown_up = 0;

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let (mut total, mut fit, mut reg, mut batches) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(config.minibatch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut mu_grad = 0.0;
            let loss = objective(
                net,
                train,
                chunk,
                *mu,
                lambda,
                &mut ws,
                Some((&mut grad[..n_w], &mut mu_grad)),
            )
            .map_err(|e| Error::TrainingAborted {
                epoch,
                reason: format!("{e}"),
            })?;
            grad[n_w] = if train_mu { mu_grad * mu_scale } else { 0.0 };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingAborted {
                    epoch,
                    reason: format!("non-finite gradient (largest |weight| {})", max_abs(&net.params)),
                });
            }
            opt.update(&mut packed, &grad);
            net.params.copy_from_slice(&packed[..n_w]);
            if train_mu {
                *mu = packed[n_w] * mu_scale;
            }
            total += loss.total;
            fit += loss.fit;
            reg += loss.regularizer;
            batches += 1.0;
        }
        let epoch_loss = LossBreakdown {
            total: total / batches,
            fit: fit / batches,
            regularizer: reg / batches,
            mu: *mu,
        };
        curve.push(epoch_loss);

        if epoch_loss.total > 10.0 * initial {
            blown_up += 1;
            if blown_up >= 5 {
                return Err(Error::TrainingAborted {
                    epoch,
                    reason: format!("loss {} exceeds ten times the initial {initial}", epoch_loss.total),
                });
            }
        } else {
            blown_up = 0;
        }
        if stop_on_plateau && curve.len() > PLATEAU_WINDOW {
            let then = curve[curve.len() - 1 - PLATEAU_WINDOW].total;
            if (epoch_loss.total - then).abs() <= PLATEAU_TOLERANCE * then.abs() {
                break;
            }
        }
    }
    Ok(curve)
}

/// Trains a neural control variate on `train` by minibatch gradient descent
/// on the centred, regularised objective.
pub fn train_cncv(train: &SampleBatch, config: &TrainConfig) -> Result<TrainedCv> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::UndersizedBatch { n: 0, required: 0 });
    }
    let (f_mean, f_var) = mean_and_variance(train.f_values());
    let f_sd = if f_var > 0.0 { f_var.sqrt() } else { 1.0 };
    let mu_scale = if config.standardize { f_sd } else { 1.0 };
    let mut rng = rng_from_seed(derive_seed(config.seed, &[1]));

    let mut mu = match (config.centered, config.mu_init) {
        (false, _) | (true, MuInit::Zero) | (true, MuInit::Pretrain { .. }) => 0.0,
        (true, MuInit::SampleMean) => f_mean,
    };
    let mut pretrain_curve = Vec::new();
    if let (true, MuInit::Pretrain { lambda }) = (config.centered, config.mu_init) {
        let mut net = fresh_network(train, config, derive_seed(config.seed, &[2]), f_sd)?;
        pretrain_curve = run_phase(&mut net, &mut mu, mu_scale, train, config, lambda, &mut rng, true)?;
    }

    let mut net = fresh_network(train, config, derive_seed(config.seed, &[3]), f_sd)?;
    let loss_curve = run_phase(&mut net, &mut mu, mu_scale, train, config, config.lambda, &mut rng, false)?;
    Ok(TrainedCv {
        model: CvModel {
            payload: CvPayload::Neural(net),
            mu,
            flags: FitFlags {
                zero_variance: f_var == 0.0,
                ..FitFlags::default()
            },
        },
        loss_curve,
        pretrain_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::IsotropicGaussian;

    fn random_net(dim: usize, hidden: &[usize], act: Activation, seed: u64) -> Mlp {
        let mut net = Mlp::new(dim, hidden, act).unwrap();
        let mut rng = rng_from_seed(seed);
        net.init_fan_in(&mut rng);
        let shift = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        let scale = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
        let out = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
        net.set_standardization(shift, scale, out).unwrap();
        net
    }

    fn gaussian_batch(dim: usize, n: usize, seed: u64) -> SampleBatch {
        let mut rng = rng_from_seed(seed);
        let thetas: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target = IsotropicGaussian::standard(dim);
        let mut batch = SampleBatch::from_target(&target, thetas, seed).unwrap();
        batch.fill_f(|t| t.iter().map(|x| x.sin() + x * x).sum());
        batch
    }

    /// Plain matrix arithmetic, no shared code with the network.
    fn reference_forward(net: &Mlp, theta: &[f64]) -> Vec<f64> {
        let w = net.widths();
        let p = net.params();
        let mut h: Vec<f64> = (0..w[0])
            .map(|j| (theta[j] - net.in_shift()[j]) / net.in_scale()[j])
            .collect();
        let mut offset = 0;
        for l in 1..w.len() {
            let mut z = vec![0.0; w[l]];
            for k in 0..w[l] {
                z[k] = p[offset + w[l] * w[l - 1] + k];
                for j in 0..w[l - 1] {
                    z[k] += p[offset + k * w[l - 1] + j] * h[j];
                }
            }
            offset += w[l] * (w[l - 1] + 1);
            h = if l + 1 < w.len() {
                z.iter()
                    .map(|&v| match net.activation() {
                        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
                        Activation::Tanh => v.tanh(),
                    })
                    .collect()
            } else {
                z.iter().zip(net.out_scale()).map(|(a, b)| a * b).collect()
            };
        }
        h
    }

    #[test]
    fn forward_matches_matrix_reference() {
        for (hidden, act) in [(vec![5, 4], Activation::Sigmoid), (vec![6], Activation::Tanh)] {
            let net = random_net(3, &hidden, act, 7);
            let theta = [0.3, -1.2, 0.8];
            let fast = net.forward(&theta);
            let generic = net.apply(net.params(), &theta);
            let reference = reference_forward(&net, &theta);
            for i in 0..3 {
                assert!((fast[i] - reference[i]).abs() < 1e-13);
                assert!((generic[i] - reference[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn divergence_matches_finite_differences_and_autodiff() {
        for (hidden, act) in [
            (vec![], Activation::Sigmoid),
            (vec![7], Activation::Tanh),
            (vec![5, 4], Activation::Sigmoid),
            (vec![4, 3, 5], Activation::Tanh),
        ] {
            let net = random_net(3, &hidden, act, 11);
            let theta = [0.4, 0.1, -0.7];
            let fast = TrialFunction::divergence(&net, &theta);
            let ad = autodiff::divergence_value(&net, &theta).unwrap();
            let h = 1e-5;
            let mut fd = 0.0;
            for i in 0..3 {
                let mut up = theta;
                let mut dn = theta;
                up[i] += h;
                dn[i] -= h;
                fd += (reference_forward(&net, &up)[i] - reference_forward(&net, &dn)[i]) / (2.0 * h);
            }
            assert!((fast - ad).abs() < 1e-12, "{hidden:?}: {fast} vs {ad}");
            assert!((fast - fd).abs() < 1e-7, "{hidden:?}: {fast} vs {fd}");
        }
    }

    #[test]
    fn identity_network_gives_laplacian_of_log_density() {
        // Φ(θ) = θ under N(0, I): g = D - |θ|².
        let net = Mlp::identity(3);
        let target = IsotropicGaussian::standard(3);
        let batch = SampleBatch::from_target(&target, vec![1.0, 2.0, -1.0, 0.0, 0.5, 0.0], 0).unwrap();
        let g = net.stein_values(&batch);
        assert!((g[0] - (3.0 - 6.0)).abs() < 1e-14);
        assert!((g[1] - (3.0 - 0.25)).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_graph_reference() {
        let batch = gaussian_batch(3, 6, 3);
        for (hidden, act) in [
            (vec![], Activation::Tanh),
            (vec![4], Activation::Sigmoid),
            (vec![4, 3], Activation::Tanh),
            (vec![3, 4, 2], Activation::Sigmoid),
        ] {
            let net = random_net(3, &hidden, act, 5);
            let (loss, grad, mu_grad) = cncv_loss_gradient(&batch, &net, 0.7, 0.3).unwrap();
            let (ref_loss, ref_grad, ref_mu) = graph_cncv_loss_gradient(&batch, &net, 0.7, 0.3).unwrap();
            assert!((loss.total - ref_loss).abs() < 1e-12 * ref_loss.abs().max(1.0));
            assert!((mu_grad - ref_mu).abs() < 1e-11);
            for (a, b) in grad.iter().zip(&ref_grad) {
                assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{hidden:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let batch = gaussian_batch(2, 5, 9);
        let mut net = random_net(2, &[5, 3], Activation::Sigmoid, 13);
        let (_, grad, mu_grad) = cncv_loss_gradient(&batch, &net, -0.2, 0.5).unwrap();
        let h = 1e-6;
        for p in 0..net.params().len() {
            let orig = net.params()[p];
            net.params_mut()[p] = orig + h;
            let up = cncv_loss(&batch, &net, -0.2, 0.5).unwrap().total;
            net.params_mut()[p] = orig - h;
            let dn = cncv_loss(&batch, &net, -0.2, 0.5).unwrap().total;
            net.params_mut()[p] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((grad[p] - fd).abs() < 1e-6 * fd.abs().max(1.0), "param {p}: {} vs {fd}", grad[p]);
        }
        let up = cncv_loss(&batch, &net, -0.2 + h, 0.5).unwrap().total;
        let dn = cncv_loss(&batch, &net, -0.2 - h, 0.5).unwrap().total;
        assert!((mu_grad - (up - dn) / (2.0 * h)).abs() < 1e-6);
    }

    #[test]
    fn loss_breakdown_is_consistent() {
        let batch = gaussian_batch(2, 8, 1);
        let net = random_net(2, &[4], Activation::Tanh, 2);
        let g = net.stein_values(&batch);
        let f = batch.f_values();
        let fit: f64 = f.iter().zip(&g).map(|(a, b)| (a + b - 1.5).powi(2)).sum::<f64>() / 8.0;
        let reg: f64 = g.iter().map(|v| v * v).sum::<f64>() / 8.0;
        let loss = cncv_loss(&batch, &net, 1.5, 0.25).unwrap();
        assert!((loss.fit - fit).abs() < 1e-12);
        assert!((loss.regularizer - reg).abs() < 1e-12);
        assert!((loss.total - (fit + 0.25 * reg)).abs() < 1e-12);
        let plain = ncv_loss(&batch, &net).unwrap();
        let direct: f64 = f.iter().zip(&g).map(|(a, b)| (a + b).powi(2)).sum::<f64>() / 8.0;
        assert!((plain.total - direct).abs() < 1e-12);
    }

    #[test]
    fn non_finite_output_reports_sample() {
        let mut batch = gaussian_batch(2, 4, 1);
        let mut f = batch.f_values().to_vec();
        f[2] = 0.0;
        batch.set_f_values(f).unwrap();
        let mut net = random_net(2, &[3], Activation::Tanh, 2);
        net.params_mut()[0] = f64::NAN;
        match cncv_loss(&batch, &net, 0.0, 0.1) {
            Err(Error::NonFiniteControlVariate { sample, .. }) => assert_eq!(sample, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let batch = gaussian_batch(2, 128, 4);
        let cfg = TrainConfig {
            hidden: vec![8],
            epochs: 60,
            minibatch: 32,
            learning_rate: 1e-2,
            optimizer: Optimizer::adam(),
            seed: 21,
            ..TrainConfig::default()
        };
        let a = train_cncv(&batch, &cfg).unwrap();
        let b = train_cncv(&batch, &cfg).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        let first = a.loss_curve[0].total;
        let last = a.loss_curve.last().unwrap().total;
        assert!(last < 0.5 * first, "{first} -> {last}");
        let smooth = |w: &[LossBreakdown]| w.iter().map(|l| l.total).sum::<f64>() / w.len() as f64;
        let windows: Vec<f64> = a.loss_curve.chunks(10).map(smooth).collect();
        assert!(windows.windows(2).all(|w| w[1] <= w[0] * 1.02), "{windows:?}");
    }

    #[test]
    fn uncentred_training_keeps_mu_at_zero() {
        let batch = gaussian_batch(2, 64, 4);
        let cfg = TrainConfig {
            hidden: vec![4],
            epochs: 5,
            centered: false,
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let trained = train_cncv(&batch, &cfg).unwrap();
        assert_eq!(trained.model.mu, 0.0);
        assert!(trained.loss_curve.iter().all(|l| l.mu == 0.0));
    }

    #[test]
    fn pretraining_runs_until_plateau_then_retrains() {
        let batch = gaussian_batch(1, 64, 8);
        let cfg = TrainConfig {
            hidden: vec![4],
            epochs: 400,
            learning_rate: 1e-2,
            optimizer: Optimizer::adam(),
            mu_init: MuInit::Pretrain { lambda: 10.0 },
            ..TrainConfig::default()
        };
        let trained = train_cncv(&batch, &cfg).unwrap();
        assert!(!trained.pretrain_curve.is_empty());
        let mean = batch.f_values().iter().sum::<f64>() / 64.0;
        let pre_mu = trained.pretrain_curve.last().unwrap().mu;
        assert!((pre_mu - mean).abs() < 0.2 * mean.abs().max(1.0), "{pre_mu} vs {mean}");
        assert_eq!(trained.loss_curve.len(), 400);
    }

    #[test]
    fn diverging_training_aborts() {
        let batch = gaussian_batch(2, 64, 4);
        let cfg = TrainConfig {
            hidden: vec![8],
            epochs: 200,
            learning_rate: 50.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_cncv(&batch, &cfg), Err(Error::TrainingAborted { .. })));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let batch = gaussian_batch(1, 8, 0);
        let mut cfg = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        };
        assert!(train_cncv(&batch, &cfg).is_err());
        cfg.lambda = 1.0;
        cfg.mu_init = MuInit::Pretrain { lambda: 0.5 };
        assert!(train_cncv(&batch, &cfg).is_err());
    }
}
