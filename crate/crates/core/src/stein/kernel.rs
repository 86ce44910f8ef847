//! Kernel control functional baseline built on a Stein reproducing kernel.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use super::{CvModel, CvPayload, FitFlags};
use crate::error::{Error, Result};
use crate::samplers::{mean_and_variance, SampleBatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise distance between fitting points.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfConfig {
    pub bandwidth: Bandwidth,
    /// Smallest ridge tried, relative to the mean diagonal of the kernel matrix.
    pub ridge: f64,
    /// Largest ridge tried before giving up.
    pub max_ridge: f64,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Median,
            ridge: 1e-5,
            max_ridge: 1e-2,
        }
    }
}

/// Fitted kernel expansion `g(θ) = -Σ_j α_j k0(θ, θ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCv {
    dim: usize,
    bandwidth: f64,
    ridge: f64,
    anchors: Vec<f64>,
    anchor_scores: Vec<f64>,
    alpha: Vec<f64>,
}

impl KernelCv {
    /// Reassembles a fitted model from stored parts.
    pub fn from_parts(
        dim: usize,
        bandwidth: f64,
        ridge: f64,
        anchors: Vec<f64>,
        anchor_scores: Vec<f64>,
        alpha: Vec<f64>,
    ) -> Result<Self> {
        let n = alpha.len();
        for len in [anchors.len(), anchor_scores.len()] {
            if len != n * dim {
                return Err(Error::DimensionMismatch { expected: n * dim, got: len });
            }
        }
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidConfig("bandwidth must be positive".into()));
        }
        Ok(Self {
            dim,
            bandwidth,
            ridge,
            anchors,
            anchor_scores,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn anchor_scores(&self) -> &[f64] {
        &self.anchor_scores
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Relative ridge finally used; `NaN` if every candidate failed.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn evaluate(&self, theta: &[f64], score: &[f64]) -> f64 {
        let d = self.dim;
        -self
            .alpha
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, a)| {
                let y = &self.anchors[j * d..(j + 1) * d];
                let sy = &self.anchor_scores[j * d..(j + 1) * d];
                a * stein_kernel(theta, score, y, sy, self.bandwidth)
            })
            .sum::<f64>()
    }
}

/// Stein kernel of a squared-exponential base kernel with length scale `ell`:
///
/// `k0(x, y) = ∇x·∇y k + ∇x k · s(y) + ∇y k · s(x) + k s(x)·s(y)`.
pub fn stein_kernel(x: &[f64], sx: &[f64], y: &[f64], sy: &[f64], ell: f64) -> f64 {
    let l2 = ell * ell;
    let mut r2 = 0.0;
    let mut cross = 0.0;
    let mut ss = 0.0;
    for i in 0..x.len() {
        let diff = x[i] - y[i];
        r2 += diff * diff;
        cross += diff * (sx[i] - sy[i]);
        ss += sx[i] * sy[i];
    }
    let k = (-0.5 * r2 / l2).exp();
    let d = x.len() as f64;
    k * (d / l2 - r2 / (l2 * l2) + cross / l2 + ss)
}

fn median_distance(points: &[f64], dim: usize) -> f64 {
    let n = (points.len() / dim).min(1000);
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            let r2: f64 = (0..dim)
                .map(|k| points[i * dim + k] - points[j * dim + k])
                .map(|v| v * v)
                .sum();
            dists.push(r2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if *median > 0.0 {
        *median
    } else {
        1.0
    }
}

/// Fits the kernel control functional.
///
/// The first half of `batch` builds the Stein kernel system
/// `(K0 + λI) α = f - β1`, with `β` the generalised-least-squares constant.
/// Ridges from `cfg.ridge` up to `cfg.max_ridge` are tried by decades; a
/// failed factorisation raises the ridge, and among the successful ones the
/// fit with the smallest variance of `f + g` on the second half is kept.
pub fn fit_control_functional(batch: &SampleBatch, cfg: &CfConfig) -> Result<CvModel> {
    let n = batch.len();
    if n < 4 {
        return Err(Error::UndersizedBatch { n, required: 3 });
    }
    if !(cfg.ridge > 0.0) || cfg.max_ridge < cfg.ridge {
        return Err(Error::InvalidConfig("control functional ridge range is empty".into()));
    }
    let d = batch.dim();
    let m = n / 2;
    let (fit, held_out) = batch.split(m)?;
    let f = fit.f_values();
    let mut flags = FitFlags::default();

    let bandwidth = match cfg.bandwidth {
        Bandwidth::Median => median_distance(fit.thetas(), d),
        Bandwidth::Fixed(ell) if ell > 0.0 => ell,
        Bandwidth::Fixed(_) => return Err(Error::InvalidConfig("bandwidth must be positive".into())),
    };
    let mut model = KernelCv {
        dim: d,
        bandwidth,
        ridge: f64::NAN,
        anchors: fit.thetas().to_vec(),
        anchor_scores: fit.scores().to_vec(),
        alpha: vec![0.0; m],
    };

    let (f_mean, f_var) = mean_and_variance(f);
    if f_var == 0.0 {
        flags.zero_variance = true;
        model.ridge = cfg.ridge;
        return Ok(CvModel {
            payload: CvPayload::ControlFunctional(model),
            mu: f_mean,
            flags,
        });
    }

    let k0 = DMatrix::from_fn(m, m, |i, j| {
        stein_kernel(fit.theta(i), fit.score(i), fit.theta(j), fit.score(j), bandwidth)
    });
    let mean_diag = k0.diagonal().mean();
    let f_vec = DVector::from_column_slice(f);
    let ones = DVector::from_element(m, 1.0);

    let mut best: Option<(f64, f64, Vec<f64>, f64)> = None; // (held-out var, beta, alpha, ridge)
    let mut ridge = cfg.ridge;
    while ridge <= cfg.max_ridge * (1.0 + 1e-9) {
        let mut a = k0.clone();
        for i in 0..m {
            a[(i, i)] += ridge * mean_diag;
        }
        match a.cholesky() {
            None => flags.regularization_raised = true,
            Some(chol) => {
                let a_inv_f = chol.solve(&f_vec);
                let a_inv_1 = chol.solve(&ones);
                let beta = a_inv_f.sum() / a_inv_1.sum();
                let alpha: Vec<f64> = (a_inv_f - a_inv_1 * beta).iter().copied().collect();
                model.alpha = alpha;
                let corrected: Vec<f64> = (0..held_out.len())
                    .map(|i| held_out.f_values()[i] + model.evaluate(held_out.theta(i), held_out.score(i)))
                    .collect();
                let (_, var) = mean_and_variance(&corrected);
                let var = if var.is_finite() { var } else { f64::INFINITY };
                if best.as_ref().map_or(true, |b| var < b.0) {
                    best = Some((var, beta, core::mem::take(&mut model.alpha), ridge));
                }
            }
        }
        ridge *= 10.0;
    }

    let mu = match best {
        Some((_, beta, alpha, ridge)) => {
            model.alpha = alpha;
            model.ridge = ridge;
            beta
        }
        None => {
            flags.regularization_exhausted = true;
            model.alpha = vec![0.0; m];
            f_mean
        }
    };
    Ok(CvModel {
        payload: CvPayload::ControlFunctional(model),
        mu,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::stein::variance_reduction_ratio;
    use crate::targets::IsotropicGaussian;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_batch(dim: usize, n: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> SampleBatch {
        let mut rng = rng_from_seed(seed);
        let thetas: Vec<f64> = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut batch = SampleBatch::from_target(&IsotropicGaussian::standard(dim), thetas, seed).unwrap();
        batch.fill_f(f);
        batch
    }

    #[test]
    fn stein_kernel_is_symmetric() {
        let x = [0.3, -0.2];
        let y = [1.0, 0.4];
        let sx = [-0.3, 0.2];
        let sy = [0.7, 1.1];
        let a = stein_kernel(&x, &sx, &y, &sy, 0.8);
        let b = stein_kernel(&y, &sy, &x, &sx, 0.8);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn stein_kernel_matches_finite_difference_definition() {
        let ell: f64 = 1.3;
        let k = |x: &[f64], y: &[f64]| {
            let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-0.5 * r2 / (ell * ell)).exp()
        };
        let x = [0.3, -0.2];
        let y = [1.0, 0.4];
        let sx = [-0.3, 0.2];
        let sy = [0.7, 1.1];
        let h = 1e-4;
        let mut value = k(&x, &y) * (sx[0] * sy[0] + sx[1] * sy[1]);
        for i in 0..2 {
            let shift = |p: &[f64; 2], d: f64| {
                let mut q = *p;
                q[i] += d;
                q
            };
            let dkx = (k(&shift(&x, h), &y) - k(&shift(&x, -h), &y)) / (2.0 * h);
            let dky = (k(&x, &shift(&y, h)) - k(&x, &shift(&y, -h))) / (2.0 * h);
            let dxy = (k(&shift(&x, h), &shift(&y, h)) - k(&shift(&x, h), &shift(&y, -h))
                - k(&shift(&x, -h), &shift(&y, h))
                + k(&shift(&x, -h), &shift(&y, -h)))
                / (4.0 * h * h);
            value += dxy + dkx * sy[i] + dky * sx[i];
        }
        let exact = stein_kernel(&x, &sx, &y, &sy, ell);
        assert!((exact - value).abs() < 1e-6, "{exact} vs {value}");
    }

    #[test]
    fn kernel_matrix_is_positive_semidefinite() {
        let batch = gaussian_batch(2, 40, 3, |_| 0.0);
        let k0 = DMatrix::from_fn(40, 40, |i, j| {
            stein_kernel(batch.theta(i), batch.score(i), batch.theta(j), batch.score(j), 1.0)
        });
        let eig = k0.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > -1e-9 * eig.max()));
    }

    #[test]
    fn control_functional_reduces_variance_of_linear_function() {
        let batch = gaussian_batch(1, 200, 5, |t| t[0]);
        let model = fit_control_functional(&batch, &CfConfig::default()).unwrap();
        let test = gaussian_batch(1, 200, 6, |t| t[0]);
        let stats = variance_reduction_ratio(&model, &test).unwrap();
        assert!(stats.ratio < 0.05, "{}", stats.ratio);
        assert!(!model.flags.any());
    }

    #[test]
    fn control_functional_on_constant() {
        let batch = gaussian_batch(2, 30, 5, |_| 4.0);
        let model = fit_control_functional(&batch, &CfConfig::default()).unwrap();
        assert!(model.flags.zero_variance);
        assert_eq!(model.mu, 4.0);
        assert!(model.evaluate_batch(&batch).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn duplicated_points_raise_or_exhaust_the_ridge() {
        let thetas = vec![0.5; 20];
        let mut batch = SampleBatch::from_target(&IsotropicGaussian::standard(1), thetas, 0).unwrap();
        batch.set_f_values((0..20).map(|i| i as f64).collect()).unwrap();
        let cfg = CfConfig {
            ridge: 1e-5,
            max_ridge: 1e-2,
            bandwidth: Bandwidth::Fixed(1.0),
        };
        let model = fit_control_functional(&batch, &cfg).unwrap();
        assert!(model.evaluate_batch(&batch).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn median_bandwidth_of_known_points() {
        let pts = [0.0, 1.0, 3.0];
        assert_eq!(median_distance(&pts, 1), 2.0);
    }
}
