//! Target densities exposing a log-density and its score function.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A density known up to an additive constant in log space, together with
/// its gradient `score(θ) = ∇θ log p(θ)`.
pub trait ScoredTarget {
    fn dim(&self) -> usize;
    fn log_density(&self, theta: &[f64]) -> Result<f64>;
    fn score(&self, theta: &[f64]) -> Result<Vec<f64>>;
}

impl<T: ScoredTarget + ?Sized> ScoredTarget for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        (**self).log_density(theta)
    }
    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        (**self).score(theta)
    }
}

/// A log-likelihood with gradient, the tempered factor of a power posterior.
pub trait Likelihood {
    fn dim(&self) -> usize;
    fn log_likelihood(&self, theta: &[f64]) -> Result<f64>;
    /// Log-likelihood and its gradient in one evaluation.
    fn log_likelihood_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<T: Likelihood + ?Sized> Likelihood for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        (**self).log_likelihood(theta)
    }
    fn log_likelihood_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).log_likelihood_grad(theta)
    }
}

pub(crate) fn check_dim(expected: usize, theta: &[f64]) -> Result<()> {
    if theta.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            got: theta.len(),
        })
    }
}

/// `N(mean, variance * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    mean: Vec<f64>,
    variance: f64,
}

impl IsotropicGaussian {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() || !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::InvalidConfig("gaussian needs dim >= 1 and variance > 0".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim.max(1)],
            variance: 1.0,
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl ScoredTarget for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta)?;
        let sq: f64 = theta.iter().zip(&self.mean).map(|(t, m)| (t - m) * (t - m)).sum();
        let d = self.dim() as f64;
        Ok(-0.5 * sq / self.variance - 0.5 * d * (LN_2PI + self.variance.ln()))
    }

    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta)?;
        Ok(theta
            .iter()
            .zip(&self.mean)
            .map(|(t, m)| -(t - m) / self.variance)
            .collect())
    }
}

/// Mixture of isotropic Gaussians sharing one variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    variance: f64,
    weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, variance: f64, weights: Vec<f64>) -> Result<Self> {
        let dim = means.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidConfig("mixture means must share a positive length".into()));
        }
        if weights.len() != means.len() || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidConfig("one nonnegative weight per component".into()));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("mixture weights must sum to 1".into()));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::InvalidConfig("mixture variance must be positive".into()));
        }
        Ok(Self {
            means,
            variance,
            weights,
        })
    }

    /// `0.5 N(-1, I) + 0.5 N(+1, I)` in `dim` dimensions, where `±1` are the
    /// all-minus-one and all-plus-one vectors.
    pub fn symmetric(dim: usize) -> Self {
        Self {
            means: vec![vec![-1.0; dim], vec![1.0; dim]],
            variance: 1.0,
            weights: vec![0.5, 0.5],
        }
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Per-component `log w_k - |θ - m_k|² / 2σ²`, `-inf` for zero weights.
    fn component_logits(&self, theta: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.weights)
            .map(|(m, &w)| {
                let sq: f64 = theta.iter().zip(m).map(|(t, mi)| (t - mi) * (t - mi)).sum();
                w.ln() - 0.5 * sq / self.variance
            })
            .collect()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl ScoredTarget for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta)?;
        let d = self.dim() as f64;
        Ok(log_sum_exp(&self.component_logits(theta)) - 0.5 * d * (LN_2PI + self.variance.ln()))
    }

    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta)?;
        let logits = self.component_logits(theta);
        let norm = log_sum_exp(&logits);
        let mut score = vec![0.0; self.dim()];
        for (logit, mean) in logits.iter().zip(&self.means) {
            let r = (logit - norm).exp();
            if r == 0.0 {
                continue;
            }
            for ((s, t), m) in score.iter_mut().zip(theta).zip(mean) {
                *s += r * (m - t) / self.variance;
            }
        }
        Ok(score)
    }
}

/// Independent `Gamma(shape, rate)` coordinates on `θ_i > 0`, normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPrior {
    dim: usize,
    shape: f64,
    rate: f64,
}

impl GammaPrior {
    pub fn new(dim: usize, shape: f64, rate: f64) -> Result<Self> {
        if dim == 0 || !(shape > 0.0) || !(rate > 0.0) {
            return Err(Error::InvalidConfig("gamma prior needs dim >= 1, shape > 0, rate > 0".into()));
        }
        Ok(Self { dim, shape, rate })
    }

    /// `Gamma(2, 1)` per coordinate.
    pub fn standard(dim: usize) -> Self {
        Self {
            dim,
            shape: 2.0,
            rate: 1.0,
        }
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn check_support(&self, theta: &[f64]) -> Result<()> {
        check_dim(self.dim, theta)?;
        if theta.iter().all(|&t| t > 0.0 && t.is_finite()) {
            Ok(())
        } else {
            Err(Error::OutOfSupport)
        }
    }
}

impl ScoredTarget for GammaPrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        self.check_support(theta)?;
        let norm = self.shape * self.rate.ln() - libm::lgamma(self.shape);
        Ok(theta
            .iter()
            .map(|&t| (self.shape - 1.0) * t.ln() - self.rate * t + norm)
            .sum())
    }

    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_support(theta)?;
        Ok(theta
            .iter()
            .map(|&t| (self.shape - 1.0) / t - self.rate)
            .collect())
    }
}

/// `p(θ | y, t) ∝ p(y | θ)^t p(θ)`.
#[derive(Debug, Clone)]
pub struct PowerPosterior<L, P> {
    likelihood: L,
    prior: P,
    t: f64,
}

impl<L: Likelihood, P: ScoredTarget> PowerPosterior<L, P> {
    pub fn new(likelihood: L, prior: P, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidConfig("inverse temperature must lie in [0, 1]".into()));
        }
        if likelihood.dim() != prior.dim() {
            return Err(Error::DimensionMismatch {
                expected: prior.dim(),
                got: likelihood.dim(),
            });
        }
        Ok(Self { likelihood, prior, t })
    }

    pub fn temperature(&self) -> f64 {
        self.t
    }

    pub fn likelihood(&self) -> &L {
        &self.likelihood
    }

    pub fn prior(&self) -> &P {
        &self.prior
    }
}

impl<L: Likelihood, P: ScoredTarget> ScoredTarget for PowerPosterior<L, P> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        let prior = self.prior.log_density(theta)?;
        if self.t == 0.0 {
            return Ok(prior);
        }
        Ok(self.t * self.likelihood.log_likelihood(theta)? + prior)
    }

    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut score = self.prior.score(theta)?;
        if self.t == 0.0 {
            return Ok(score);
        }
        let (_, grad) = self.likelihood.log_likelihood_grad(theta)?;
        for (s, g) in score.iter_mut().zip(grad) {
            *s += self.t * g;
        }
        Ok(score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn fd_gradient(target: &impl ScoredTarget, theta: &[f64], h: f64) -> Vec<f64> {
        (0..theta.len())
            .map(|i| {
                let mut up = theta.to_vec();
                let mut down = theta.to_vec();
                up[i] += h;
                down[i] -= h;
                (target.log_density(&up).unwrap() - target.log_density(&down).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn assert_score_matches(target: &impl ScoredTarget, theta: &[f64]) {
        let score = target.score(theta).unwrap();
        let fd = fd_gradient(target, theta, 1e-5);
        for (s, f) in score.iter().zip(&fd) {
            let err = (s - f).abs() / f.abs().max(1e-2);
            assert!(err < 1e-6, "score {s} vs fd {f} at {theta:?}");
        }
    }

    #[test]
    fn standard_normal_values() {
        let n = IsotropicGaussian::standard(1);
        assert!((n.log_density(&[0.0]).unwrap() + 0.5 * LN_2PI).abs() < 1e-15);
        assert_eq!(n.score(&[1.3]).unwrap(), vec![-1.3]);
        let n3 = IsotropicGaussian::standard(3);
        assert_eq!(n3.score(&[1.0, -2.0, 0.5]).unwrap(), vec![-1.0, 2.0, -0.5]);
    }

    #[test]
    fn symmetric_mixture_at_origin() {
        let m = GaussianMixture::symmetric(1);
        let expected = ((-0.5f64).exp() / (2.0 * core::f64::consts::PI).sqrt()).ln();
        assert!((m.log_density(&[0.0]).unwrap() - expected).abs() < 1e-14);
        let m2 = GaussianMixture::symmetric(2);
        assert_eq!(m2.score(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_score_matches(&m2, &[0.3, -0.7]);
    }

    #[test]
    fn mixture_stays_finite_in_thirty_dimensions() {
        let m = GaussianMixture::symmetric(30);
        let far = vec![25.0; 30];
        assert!(m.log_density(&far).unwrap().is_finite());
        let s = m.score(&far).unwrap();
        assert!(s.iter().all(|v| (v + 24.0).abs() < 1e-9));
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixture::new(vec![vec![0.0]], 1.0, vec![0.5]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0], vec![1.0, 2.0]], 1.0, vec![0.5, 0.5]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0]], 0.0, vec![1.0]).is_err());
        let degenerate = GaussianMixture::new(vec![vec![-1.0], vec![1.0]], 1.0, vec![1.0, 0.0]).unwrap();
        assert_eq!(degenerate.score(&[0.5]).unwrap(), vec![-1.5]);
    }

    #[test]
    fn gamma_prior_direct_formula() {
        let p = GammaPrior::standard(2);
        // Gamma(2,1) density is θ e^{-θ}; at θ = 1 each coordinate gives ln(1) - 1.
        let direct: f64 = [1.0f64, 1.0].iter().map(|t| t.ln() - t).sum();
        assert_eq!(p.log_density(&[1.0, 1.0]).unwrap(), direct);
        assert_eq!(p.score(&[0.5, 2.0]).unwrap(), vec![1.0, -0.5]);
        assert_eq!(p.log_density(&[1.0, 0.0]), Err(Error::OutOfSupport));
        assert_eq!(p.score(&[-1.0, 1.0]), Err(Error::OutOfSupport));
        assert!(matches!(p.score(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn scores_match_finite_differences_at_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mixture = GaussianMixture::new(
            vec![vec![-1.0, 0.5, 2.0], vec![1.0, -0.5, 0.0], vec![0.0, 3.0, -2.0]],
            0.7,
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let gauss = IsotropicGaussian::new(vec![0.5, -1.0, 2.0], 2.0).unwrap();
        let gamma = GammaPrior::new(3, 2.5, 1.5).unwrap();
        for _ in 0..100 {
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert_score_matches(&mixture, &theta);
            assert_score_matches(&gauss, &theta);
            let positive: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..5.0)).collect();
            assert_score_matches(&gamma, &positive);
        }
    }

    #[test]
    fn mixture_score_is_bounded_by_component_spread() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m = GaussianMixture::symmetric(4);
        for _ in 0..200 {
            let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-6.0..6.0)).collect();
            let s = m.score(&theta).unwrap();
            for (i, si) in s.iter().enumerate() {
                let bound = m
                    .means()
                    .iter()
                    .map(|mean| (theta[i] - mean[i]).abs())
                    .fold(0.0, f64::max)
                    / m.variance();
                assert!(si.abs() <= bound + 1e-12);
            }
        }
    }

    struct Quadratic;
    impl Likelihood for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
            Ok(-(theta[0] - 1.0).powi(2) - 3.0 * theta[1] * theta[1])
        }
        fn log_likelihood_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((
                self.log_likelihood(theta)?,
                vec![-2.0 * (theta[0] - 1.0), -6.0 * theta[1]],
            ))
        }
    }

    #[test]
    fn power_posterior_endpoints_and_linearity() {
        let prior = GammaPrior::standard(2);
        let theta = [0.7, 1.9];
        let prior_score = prior.score(&theta).unwrap();
        let at = |t| PowerPosterior::new(Quadratic, &prior, t).unwrap();
        assert_eq!(at(0.0).score(&theta).unwrap(), prior_score);
        let full = at(1.0).score(&theta).unwrap();
        let (_, g) = Quadratic.log_likelihood_grad(&theta).unwrap();
        for i in 0..2 {
            assert_eq!(full[i], g[i] + prior_score[i]);
        }
        let half = at(0.5).score(&theta).unwrap();
        for i in 0..2 {
            let affine = 0.5 * (full[i] - prior_score[i]) + prior_score[i];
            assert!((half[i] - affine).abs() <= 1e-14 * affine.abs().max(1.0));
        }
        assert_score_matches(&at(0.3), &theta);
        assert!(PowerPosterior::new(Quadratic, &prior, 1.5).is_err());
    }
}
