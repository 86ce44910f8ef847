//! Stein control variates.
//!
//! A trial function `Φ` turns into a zero-mean control variate through
//! `g(θ) = ∇·Φ(θ) + Φ(θ)·s(θ)`. This module holds that operator, the
//! closed-form polynomial fits, the kernel control functional baseline and
//! the variance-reduction metrics shared by every method.

mod kernel;
mod trial;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

pub use kernel::{fit_control_functional, stein_kernel, Bandwidth, CfConfig, KernelCv};
pub use trial::{ConstantTrial, FieldTrial, LinearTrial, TrialFunction};

use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::samplers::{mean_and_variance, SampleBatch};

fn check_dims(dim: usize, score: &[f64], theta: &[f64]) -> Result<()> {
    for got in [score.len(), theta.len()] {
        if got != dim {
            return Err(Error::DimensionMismatch { expected: dim, got });
        }
    }
    Ok(())
}

/// `∇·Φ(θ) + Φ(θ)·score`.
pub fn stein_g<T: TrialFunction + ?Sized>(trial: &T, score: &[f64], theta: &[f64]) -> Result<f64> {
    check_dims(trial.dim(), score, theta)?;
    let phi = trial.value(theta);
    let dot: f64 = phi.iter().zip(score).map(|(p, s)| p * s).sum();
    Ok(trial.divergence(theta) + dot)
}

/// `ΔQ(θ) + ∇Q(θ)·score`, given the gradient and Laplacian of `Q`.
pub fn laplacian_g(
    q_gradient: impl Fn(&[f64]) -> Vec<f64>,
    q_laplacian: impl Fn(&[f64]) -> f64,
    score: &[f64],
    theta: &[f64],
) -> Result<f64> {
    let grad = q_gradient(theta);
    check_dims(grad.len(), score, theta)?;
    let dot: f64 = grad.iter().zip(score).map(|(p, s)| p * s).sum();
    Ok(q_laplacian(theta) + dot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvKind {
    Linear,
    Quadratic,
    ControlFunctional,
    Neural,
}

impl CvKind {
    pub fn name(self) -> &'static str {
        match self {
            CvKind::Linear => "linear",
            CvKind::Quadratic => "quadratic",
            CvKind::ControlFunctional => "cf",
            CvKind::Neural => "cncv",
        }
    }
}

/// Conditions encountered while fitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitFlags {
    /// The moment matrix was singular and solved with a small ridge.
    pub ridge_jitter: bool,
    /// The test function was constant on the fitting data.
    pub zero_variance: bool,
    /// A kernel factorisation failed and the ridge was raised.
    pub regularization_raised: bool,
    /// Every ridge failed; the model degenerated to `g = 0`.
    pub regularization_exhausted: bool,
}

impl FitFlags {
    pub fn any(&self) -> bool {
        self.ridge_jitter || self.zero_variance || self.regularization_raised || self.regularization_exhausted
    }
}

#[derive(Debug, Clone)]
pub enum CvPayload {
    /// `g = aᵀ s`.
    Linear { coefficients: Vec<f64> },
    /// `g = βᵀ ψ(θ, s)` over [`quadratic_features`].
    Quadratic { coefficients: Vec<f64> },
    ControlFunctional(KernelCv),
    Neural(Mlp),
}

/// A fitted control variate `g` with its fitted offset `μ`.
///
/// [`CvModel::evaluate`] returns the zero-mean Stein function; `μ` is the
/// fit's own estimate of `E[f]` and is not part of `g`.
#[derive(Debug, Clone)]
pub struct CvModel {
    pub payload: CvPayload,
    pub mu: f64,
    pub flags: FitFlags,
}

impl CvModel {
    pub fn kind(&self) -> CvKind {
        match self.payload {
            CvPayload::Linear { .. } => CvKind::Linear,
            CvPayload::Quadratic { .. } => CvKind::Quadratic,
            CvPayload::ControlFunctional(_) => CvKind::ControlFunctional,
            CvPayload::Neural(_) => CvKind::Neural,
        }
    }

    pub fn evaluate(&self, theta: &[f64], score: &[f64]) -> f64 {
        match &self.payload {
            CvPayload::Linear { coefficients } => coefficients.iter().zip(score).map(|(a, s)| a * s).sum(),
            CvPayload::Quadratic { coefficients } => {
                let mut psi = Vec::with_capacity(coefficients.len());
                quadratic_features(theta, score, &mut psi);
                psi.iter().zip(coefficients).map(|(p, b)| p * b).sum()
            }
            CvPayload::ControlFunctional(k) => k.evaluate(theta, score),
            CvPayload::Neural(net) => stein_g(net, score, theta).unwrap_or(f64::NAN),
        }
    }

    pub fn evaluate_batch(&self, batch: &SampleBatch) -> Vec<f64> {
        if let CvPayload::Neural(net) = &self.payload {
            return net.stein_values(batch);
        }
        (0..batch.len())
            .map(|i| self.evaluate(batch.theta(i), batch.score(i)))
            .collect()
    }
}

/// Appends the quadratic Stein features for `Q(θ) = aᵀθ + θᵀBθ/2`:
/// `s_i`, then `1 + θ_i s_i`, then `θ_j s_i + θ_i s_j` for `i < j`.
pub fn quadratic_features(theta: &[f64], score: &[f64], out: &mut Vec<f64>) {
    let d = theta.len();
    out.extend_from_slice(score);
    out.extend((0..d).map(|i| 1.0 + theta[i] * score[i]));
    for i in 0..d {
        for j in i + 1..d {
            out.push(theta[j] * score[i] + theta[i] * score[j]);
        }
    }
}

pub fn quadratic_feature_count(dim: usize) -> usize {
    dim * (dim + 3) / 2
}

/// Solves `-Cov(ψ,ψ)⁻¹ Cov(ψ,f)` on empirical (centred) moments.
fn fit_features(features: &[f64], n_features: usize, f: &[f64]) -> Result<(Vec<f64>, FitFlags)> {
    let n = f.len();
    let p = n_features;
    let mut flags = FitFlags::default();
    let mut means = vec![0.0; p];
    for row in features.chunks_exact(p) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let f_mean = f.iter().sum::<f64>() / n as f64;

    let mut cov = vec![0.0; p * p];
    let mut cross = vec![0.0; p];
    let mut centred = vec![0.0; p];
    for (row, fv) in features.chunks_exact(p).zip(f) {
        for k in 0..p {
            centred[k] = row[k] - means[k];
        }
        let fc = fv - f_mean;
        for a in 0..p {
            let ca = centred[a];
            cross[a] += ca * fc;
            let cov_row = &mut cov[a * p..a * p + a + 1];
            for (c, cb) in cov_row.iter_mut().zip(&centred[..=a]) {
                *c += ca * cb;
            }
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    let cov = DMatrix::from_fn(p, p, |i, j| {
        let (a, b) = if i >= j { (i, j) } else { (j, i) };
        cov[a * p + b] * scale
    });
    let rhs = DVector::from_iterator(p, cross.iter().map(|c| c * scale));

    let max_var = cov.diagonal().max();
    let well_posed = cov.clone().cholesky().filter(|chol| {
        let l = chol.l_dirty();
        (0..p).all(|i| l[(i, i)] * l[(i, i)] > 1e-12 * max_var)
    });
    let solution = match well_posed {
        Some(chol) => chol.solve(&rhs),
        None => {
            flags.ridge_jitter = true;
            let trace = cov.trace();
            if !(trace > 0.0) {
                return Ok((vec![0.0; p], flags));
            }
            let mut jittered = cov;
            for i in 0..p {
                jittered[(i, i)] += 1e-8 * trace / p as f64;
            }
            jittered.cholesky().ok_or(Error::Singular)?.solve(&rhs)
        }
    };
    Ok((solution.iter().map(|v| -v).collect(), flags))
}

fn centred_offset(f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).map(|(a, b)| a + b).sum::<f64>() / f.len() as f64
}

/// Closed-form first-degree polynomial control variate `g = aᵀs`.
pub fn fit_linear_cv(batch: &SampleBatch) -> Result<CvModel> {
    let d = batch.dim();
    if batch.len() <= d {
        return Err(Error::UndersizedBatch {
            n: batch.len(),
            required: d,
        });
    }
    let (coefficients, mut flags) = fit_features(batch.scores(), d, batch.f_values())?;
    let model = CvModel {
        payload: CvPayload::Linear { coefficients },
        mu: 0.0,
        flags,
    };
    let g = model.evaluate_batch(batch);
    flags.zero_variance = mean_and_variance(batch.f_values()).1 == 0.0;
    Ok(CvModel {
        mu: centred_offset(batch.f_values(), &g),
        flags,
        ..model
    })
}

/// Closed-form second-degree polynomial control variate over
/// `D(D+3)/2` Stein features.
pub fn fit_quadratic_cv(batch: &SampleBatch) -> Result<CvModel> {
    let d = batch.dim();
    let p = quadratic_feature_count(d);
    if batch.len() <= p {
        return Err(Error::UndersizedBatch {
            n: batch.len(),
            required: p,
        });
    }
    let mut features = Vec::with_capacity(batch.len() * p);
    for i in 0..batch.len() {
        quadratic_features(batch.theta(i), batch.score(i), &mut features);
    }
    let (coefficients, mut flags) = fit_features(&features, p, batch.f_values())?;
    let model = CvModel {
        payload: CvPayload::Quadratic { coefficients },
        mu: 0.0,
        flags,
    };
    let g = model.evaluate_batch(batch);
    flags.zero_variance = mean_and_variance(batch.f_values()).1 == 0.0;
    Ok(CvModel {
        mu: centred_offset(batch.f_values(), &g),
        flags,
        ..model
    })
}

/// Plain and corrected statistics of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub n: usize,
    pub raw_mean: f64,
    pub raw_var: f64,
    pub corrected_mean: f64,
    pub corrected_var: f64,
    /// `Var[f + g] / Var[f]`; `0` when both variances vanish and `+inf`
    /// when only `Var[f]` does.
    pub ratio: f64,
    pub zero_variance: bool,
}

impl BatchStats {
    /// Statistics of `f` and `f + g` for paired values.
    pub fn from_values(f: &[f64], g: &[f64]) -> Result<Self> {
        if f.is_empty() || f.len() != g.len() {
            return Err(Error::DimensionMismatch {
                expected: f.len(),
                got: g.len(),
            });
        }
        let corrected: Vec<f64> = f.iter().zip(g).map(|(a, b)| a + b).collect();
        let (raw_mean, raw_var) = mean_and_variance(f);
        let (corrected_mean, corrected_var) = mean_and_variance(&corrected);
        let zero_variance = raw_var == 0.0;
        let ratio = match (zero_variance, corrected_var == 0.0) {
            (false, _) => corrected_var / raw_var,
            (true, true) => 0.0,
            (true, false) => f64::INFINITY,
        };
        Ok(Self {
            n: f.len(),
            raw_mean,
            raw_var,
            corrected_mean,
            corrected_var,
            ratio,
            zero_variance,
        })
    }

    pub fn raw_se(&self) -> f64 {
        (self.raw_var / self.n as f64).sqrt()
    }

    pub fn corrected_se(&self) -> f64 {
        (self.corrected_var / self.n as f64).sqrt()
    }
}

/// Evaluates `g` afresh on `batch` and compares `Var[f + g]` with `Var[f]`.
pub fn variance_reduction_ratio(model: &CvModel, batch: &SampleBatch) -> Result<BatchStats> {
    let g = model.evaluate_batch(batch);
    BatchStats::from_values(batch.f_values(), &g)
}

/// Train and test variance-reduction summary of one fitted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    pub ratio_train: f64,
    pub ratio_test: f64,
    /// Mean of `f + g` on the test batch.
    pub corrected_mean: f64,
    /// Mean of `f` on the test batch.
    pub raw_mean: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub raw_se: f64,
    pub corrected_se: f64,
    pub zero_variance: bool,
}

impl VarianceReport {
    pub fn evaluate(model: &CvModel, train: &SampleBatch, test: &SampleBatch) -> Result<Self> {
        let tr = variance_reduction_ratio(model, train)?;
        let te = variance_reduction_ratio(model, test)?;
        Ok(Self {
            ratio_train: tr.ratio,
            ratio_test: te.ratio,
            corrected_mean: te.corrected_mean,
            raw_mean: te.raw_mean,
            n_train: tr.n,
            n_test: te.n,
            raw_se: te.raw_se(),
            corrected_se: te.corrected_se(),
            zero_variance: tr.zero_variance || te.zero_variance,
        })
    }
}
