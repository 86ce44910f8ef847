//! Sample batches and the samplers that produce them: exact draws from
//! Gaussian mixtures, random-walk Metropolis and parallel tempering over a
//! power-posterior ladder.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::targets::{GaussianMixture, Likelihood, PowerPosterior, ScoredTarget};

/// Draws with their scores and test-function values, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    thetas: Vec<f64>,
    scores: Vec<f64>,
    f_values: Vec<f64>,
    pub rng_seed: u64,
}

impl SampleBatch {
    /// Builds a batch from row-major draws and their scores. Test-function
    /// values start at zero; fill them with [`SampleBatch::fill_f`].
    pub fn new(dim: usize, thetas: Vec<f64>, scores: Vec<f64>, rng_seed: u64) -> Result<Self> {
        if dim == 0 || thetas.is_empty() || thetas.len() % dim != 0 {
            return Err(Error::InvalidConfig("batch needs n >= 1 rows of a positive dimension".into()));
        }
        if scores.len() != thetas.len() {
            return Err(Error::DimensionMismatch {
                expected: thetas.len(),
                got: scores.len(),
            });
        }
        if thetas.iter().chain(&scores).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("batch rows must be finite".into()));
        }
        let n = thetas.len() / dim;
        Ok(Self {
            dim,
            thetas,
            scores,
            f_values: vec![0.0; n],
            rng_seed,
        })
    }

    /// Builds a batch from draws, evaluating the target score at every row.
    pub fn from_target<T: ScoredTarget>(target: &T, thetas: Vec<f64>, rng_seed: u64) -> Result<Self> {
        let dim = target.dim();
        if dim == 0 || thetas.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: thetas.len() % dim.max(1),
            });
        }
        let mut scores = Vec::with_capacity(thetas.len());
        for row in thetas.chunks_exact(dim) {
            scores.extend(target.score(row)?);
        }
        Self::new(dim, thetas, scores, rng_seed)
    }

    pub fn len(&self) -> usize {
        self.f_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.thetas[i * self.dim..(i + 1) * self.dim]
    }

    pub fn score(&self, i: usize) -> &[f64] {
        &self.scores[i * self.dim..(i + 1) * self.dim]
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }

    /// Evaluates the test function at every row.
    pub fn fill_f(&mut self, f: impl Fn(&[f64]) -> f64) {
        for (i, fv) in self.f_values.iter_mut().enumerate() {
            *fv = f(&self.thetas[i * self.dim..(i + 1) * self.dim]);
        }
    }

    pub fn set_f_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        self.f_values = values;
        Ok(())
    }

    /// Rows `range` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidConfig("empty or out-of-range batch slice".into()));
        }
        let d = self.dim;
        Ok(Self {
            dim: d,
            thetas: self.thetas[start * d..end * d].to_vec(),
            scores: self.scores[start * d..end * d].to_vec(),
            f_values: self.f_values[start..end].to_vec(),
            rng_seed: self.rng_seed,
        })
    }

    /// Splits into the first `n_first` rows and the rest.
    pub fn split(&self, n_first: usize) -> Result<(Self, Self)> {
        Ok((self.slice(0, n_first)?, self.slice(n_first, self.len())?))
    }
}

/// Exact ancestral sampling: pick a component by weight, then add isotropic noise.
pub fn sample_mixture_iid(mixture: &GaussianMixture, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let dim = mixture.dim();
    let sd = mixture.variance().sqrt();
    let mut thetas = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = mixture.weights().len() - 1;
        for (j, w) in mixture.weights().iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        for &m in &mixture.means()[k] {
            let z: f64 = StandardNormal.sample(&mut rng);
            thetas.push(m + sd * z);
        }
    }
    SampleBatch::from_target(mixture, thetas, seed)
}

/// How retained states are picked from the post-burn-in window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Thinning {
    /// Evenly spaced iterations.
    Stride,
    /// A seeded uniform subsample without replacement.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    /// Number of retained states per chain.
    pub n_samples: usize,
    pub proposal_scale: f64,
    /// Per-rung proposal scales for parallel tempering; empty means
    /// `proposal_scale` everywhere.
    pub rung_proposal_scales: Vec<f64>,
    pub temperature_rungs: Vec<f64>,
    pub swap_interval: usize,
    pub seed: u64,
    pub thinning: Thinning,
    /// Tune each chain's proposal scale toward [`TARGET_ACCEPTANCE`] during
    /// burn-in; scales are frozen afterwards.
    pub adapt_burn_in: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iterations: 20_000,
            burn_in: 10_000,
            n_samples: 2_000,
            proposal_scale: 0.1,
            rung_proposal_scales: Vec::new(),
            temperature_rungs: vec![1.0],
            swap_interval: 10,
            seed: 0,
            thinning: Thinning::Stride,
            adapt_burn_in: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.burn_in >= self.n_iterations {
            return bad("burn_in must be smaller than n_iterations");
        }
        if self.n_samples == 0 || self.n_samples > self.n_iterations - self.burn_in {
            return bad("n_samples must lie in 1..=n_iterations - burn_in");
        }
        if !(self.proposal_scale > 0.0) {
            return bad("proposal_scale must be positive");
        }
        let rungs = &self.temperature_rungs;
        if rungs.is_empty() || rungs.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("temperature rungs must be strictly increasing");
        }
        if !(rungs[0] >= 0.0) || rungs[rungs.len() - 1] != 1.0 {
            return bad("temperature rungs must lie in [0, 1] and end at 1");
        }
        if !self.rung_proposal_scales.is_empty()
            && (self.rung_proposal_scales.len() != rungs.len()
                || self.rung_proposal_scales.iter().any(|s| !(*s > 0.0)))
        {
            return bad("one positive proposal scale per rung");
        }
        if self.swap_interval == 0 {
            return bad("swap_interval must be positive");
        }
        Ok(())
    }

    fn scale_for(&self, rung: usize) -> f64 {
        self.rung_proposal_scales
            .get(rung)
            .copied()
            .unwrap_or(self.proposal_scale)
    }

    /// Sorted iteration indices whose states are retained.
    fn retained_iterations(&self, rng_seed: u64) -> Vec<usize> {
        let window = self.n_iterations - self.burn_in;
        match self.thinning {
            Thinning::Stride => (0..self.n_samples)
                .map(|k| self.burn_in + k * window / self.n_samples)
                .collect(),
            Thinning::Random => {
                let mut rng = rng_from_seed(rng_seed);
                let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, window, self.n_samples)
                    .into_iter()
                    .map(|i| i + self.burn_in)
                    .collect();
                picked.sort_unstable();
                picked
            }
        }
    }
}

/// Acceptance rate the burn-in adaptation aims for.
pub const TARGET_ACCEPTANCE: f64 = 0.234;
/// Proposals between burn-in scale updates.
const ADAPT_WINDOW: usize = 50;

/// Consecutive rejections after which a chain is reported as stuck.
pub const STUCK_STREAK: usize = 1000;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainDiagnostics {
    pub proposals: usize,
    pub accepted: usize,
    pub longest_rejection_streak: usize,
    /// Proposal scale after any burn-in adaptation.
    pub proposal_scale: f64,
}

impl ChainDiagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    /// True when some stretch of [`STUCK_STREAK`] proposals was all rejected.
    pub fn stuck_warning(&self) -> bool {
        self.longest_rejection_streak >= STUCK_STREAK
    }
}

/// Metropolis acceptance probability `min(1, exp(proposed - current))`.
pub fn acceptance_probability(current_log_density: f64, proposed_log_density: f64) -> f64 {
    let delta = proposed_log_density - current_log_density;
    if delta >= 0.0 {
        1.0
    } else {
        delta.exp()
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub batch: SampleBatch,
    pub diagnostics: ChainDiagnostics,
}

/// State of one random-walk chain. `log_likelihood` and `log_prior` are
/// only meaningful for tempered chains.
struct Chain {
    theta: Vec<f64>,
    log_density: f64,
    log_likelihood: f64,
    log_prior: f64,
    scale: f64,
    rng: Rng,
    streak: usize,
    window_accepted: usize,
    diagnostics: ChainDiagnostics,
}

/// A proposal evaluation: `(log_density, log_likelihood, log_prior)`, or
/// `None` when the proposal must be rejected.
type Evaluation = Option<(f64, f64, f64)>;

impl Chain {
    fn step(&mut self, eval: impl Fn(&[f64]) -> Evaluation) {
        let proposal: Vec<f64> = self
            .theta
            .iter()
            .map(|&t| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                t + self.scale * z
            })
            .collect();
        let u: f64 = self.rng.random();
        self.diagnostics.proposals += 1;
        let accepted = match eval(&proposal) {
            Some((ld, ll, lp)) if ld.is_finite() && u.ln() < ld - self.log_density => {
                self.theta = proposal;
                self.log_density = ld;
                self.log_likelihood = ll;
                self.log_prior = lp;
                true
            }
            _ => false,
        };
        if accepted {
            self.window_accepted += 1;
            self.diagnostics.accepted += 1;
            self.streak = 0;
        } else {
            self.streak += 1;
            self.diagnostics.longest_rejection_streak =
                self.diagnostics.longest_rejection_streak.max(self.streak);
        }
    }
}

impl Chain {
    /// Multiplicative scale update at the end of each adaptation window.
    fn adapt(&mut self, iteration: usize, config: &ChainConfig) {
        if !config.adapt_burn_in || iteration >= config.burn_in || (iteration + 1) % ADAPT_WINDOW != 0 {
            return;
        }
        let rate = self.window_accepted as f64 / ADAPT_WINDOW as f64;
        self.scale *= (2.0 * (rate - TARGET_ACCEPTANCE)).exp();
        self.window_accepted = 0;
    }

    fn finish(self) -> ChainDiagnostics {
        ChainDiagnostics {
            proposal_scale: self.scale,
            ..self.diagnostics
        }
    }
}

fn plain_eval<T: ScoredTarget>(target: &T) -> impl Fn(&[f64]) -> Evaluation + '_ {
    move |theta| target.log_density(theta).ok().map(|ld| (ld, 0.0, 0.0))
}

/// Gaussian random-walk Metropolis. Returns retained post-burn-in states with
/// their scores; `f_values` are left at zero for the caller to fill.
pub fn metropolis<T: ScoredTarget>(target: &T, config: &ChainConfig, init: &[f64]) -> Result<ChainOutput> {
    config.validate()?;
    crate::targets::check_dim(target.dim(), init)?;
    let eval = plain_eval(target);
    let (ld, _, _) = eval(init)
        .filter(|(ld, _, _)| ld.is_finite())
        .ok_or(Error::OutOfSupport)?;
    let mut chain = Chain {
        theta: init.to_vec(),
        log_density: ld,
        log_likelihood: 0.0,
        log_prior: 0.0,
        scale: config.proposal_scale,
        rng: rng_from_seed(config.seed),
        streak: 0,
        window_accepted: 0,
        diagnostics: ChainDiagnostics::default(),
    };
    let keep = config.retained_iterations(thinning_seed(config.seed, 0));
    let mut thetas = Vec::with_capacity(keep.len() * init.len());
    let mut next = 0;
    for it in 0..config.n_iterations {
        chain.step(&eval);
        chain.adapt(it, config);
        while next < keep.len() && keep[next] == it {
            thetas.extend_from_slice(&chain.theta);
            next += 1;
        }
    }
    Ok(ChainOutput {
        batch: SampleBatch::from_target(target, thetas, config.seed)?,
        diagnostics: chain.finish(),
    })
}

fn thinning_seed(seed: u64, rung: usize) -> u64 {
    derive_seed(seed, &[0x7417_u64, rung as u64])
}

#[derive(Debug, Clone)]
pub struct TemperingOutput {
    pub rungs: Vec<f64>,
    /// One batch per rung; `f_values` hold the log-likelihood of each row.
    pub batches: Vec<SampleBatch>,
    pub diagnostics: Vec<ChainDiagnostics>,
    /// Per adjacent pair `(k, k+1)`: `(proposed, accepted)` swaps.
    pub swaps: Vec<(usize, usize)>,
}

impl TemperingOutput {
    pub fn swap_acceptance(&self, pair: usize) -> f64 {
        let (p, a) = self.swaps[pair];
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}

/// Parallel tempering over the power-posterior family `p(y|θ)^t p(θ)`.
///
/// One chain per rung in `config.temperature_rungs`; chain `k` draws from
/// the RNG stream seeded with `seed + k`. Every `swap_interval` iterations
/// each adjacent pair proposes to exchange states, accepted with
/// probability `min(1, exp[(t_{k+1} - t_k)(L_k - L_{k+1})])`.
pub fn parallel_tempering<L: Likelihood, P: ScoredTarget>(
    likelihood: &L,
    prior: &P,
    config: &ChainConfig,
    init: &[f64],
) -> Result<TemperingOutput> {
    config.validate()?;
    crate::targets::check_dim(prior.dim(), init)?;
    let rungs = config.temperature_rungs.clone();
    let evaluate = |theta: &[f64]| -> Option<(f64, f64)> {
        let lp = prior.log_density(theta).ok()?;
        let ll = likelihood.log_likelihood(theta).ok()?;
        (lp.is_finite() && ll.is_finite()).then_some((ll, lp))
    };
    let (ll0, lp0) = evaluate(init).ok_or(Error::OutOfSupport)?;

    let mut chains: Vec<Chain> = rungs
        .iter()
        .enumerate()
        .map(|(k, &t)| Chain {
            theta: init.to_vec(),
            log_density: tempered(t, ll0, lp0),
            log_likelihood: ll0,
            log_prior: lp0,
            scale: config.scale_for(k),
            rng: rng_from_seed(config.seed.wrapping_add(k as u64)),
            streak: 0,
            window_accepted: 0,
            diagnostics: ChainDiagnostics::default(),
        })
        .collect();
    let mut swap_rng = rng_from_seed(derive_seed(config.seed, &[0x5EA9]));
    let mut swaps = vec![(0usize, 0usize); rungs.len().saturating_sub(1)];

    let keep: Vec<Vec<usize>> = (0..rungs.len())
        .map(|k| config.retained_iterations(thinning_seed(config.seed, k)))
        .collect();
    let mut kept: Vec<Vec<f64>> = vec![Vec::new(); rungs.len()];
    let mut kept_ll: Vec<Vec<f64>> = vec![Vec::new(); rungs.len()];
    let mut next = vec![0usize; rungs.len()];

    for it in 0..config.n_iterations {
        for (chain, &t) in chains.iter_mut().zip(&rungs) {
            chain.step(|theta| evaluate(theta).map(|(ll, lp)| (tempered(t, ll, lp), ll, lp)));
            chain.adapt(it, config);
        }
        if (it + 1) % config.swap_interval == 0 {
            for k in 0..rungs.len().saturating_sub(1) {
                let (lo, hi) = chains.split_at_mut(k + 1);
                let (a, b) = (&mut lo[k], &mut hi[0]);
                let log_ratio = (rungs[k + 1] - rungs[k]) * (a.log_likelihood - b.log_likelihood);
                let u: f64 = swap_rng.random();
                swaps[k].0 += 1;
                if u.ln() < log_ratio {
                    swaps[k].1 += 1;
                    core::mem::swap(&mut a.theta, &mut b.theta);
                    core::mem::swap(&mut a.log_likelihood, &mut b.log_likelihood);
                    core::mem::swap(&mut a.log_prior, &mut b.log_prior);
                    a.log_density = tempered(rungs[k], a.log_likelihood, a.log_prior);
                    b.log_density = tempered(rungs[k + 1], b.log_likelihood, b.log_prior);
                }
            }
        }
        for k in 0..rungs.len() {
            while next[k] < keep[k].len() && keep[k][next[k]] == it {
                kept[k].extend_from_slice(&chains[k].theta);
                kept_ll[k].push(chains[k].log_likelihood);
                next[k] += 1;
            }
        }
    }

    let mut batches = Vec::with_capacity(rungs.len());
    for (k, (&t, thetas)) in rungs.iter().zip(kept).enumerate() {
        let target = PowerPosterior::new(likelihood, prior, t)?;
        let mut batch = SampleBatch::from_target(&target, thetas, config.seed.wrapping_add(k as u64))?;
        batch.set_f_values(core::mem::take(&mut kept_ll[k]))?;
        batches.push(batch);
    }
    Ok(TemperingOutput {
        rungs,
        batches,
        diagnostics: chains.into_iter().map(Chain::finish).collect(),
        swaps,
    })
}

fn tempered(t: f64, log_likelihood: f64, log_prior: f64) -> f64 {
    if t == 0.0 {
        log_prior
    } else {
        t * log_likelihood + log_prior
    }
}

/// Sample mean and unbiased sample variance.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::IsotropicGaussian;

    #[test]
    fn degenerate_mixture_draws_one_component() {
        let m = GaussianMixture::new(vec![vec![-1.0], vec![1.0]], 1.0, vec![1.0, 0.0]).unwrap();
        let n = 20_000;
        let b = sample_mixture_iid(&m, n, 9).unwrap();
        let (mean, _) = mean_and_variance(b.thetas());
        assert!((mean + 1.0).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn symmetric_mixture_moments() {
        // Var = σ² + Σ w m² - (Σ w m)² = 1 + 1 - 0 = 2.
        let n = 100_000;
        let b = sample_mixture_iid(&GaussianMixture::symmetric(1), n, 1).unwrap();
        let (mean, var) = mean_and_variance(b.thetas());
        assert!(mean.abs() < 4.0 * (2.0 / n as f64).sqrt());
        assert!((var - 2.0).abs() < 0.1);
    }

    #[test]
    fn iid_sampling_is_deterministic_and_scores_match() {
        let m = GaussianMixture::symmetric(3);
        let a = sample_mixture_iid(&m, 50, 42).unwrap();
        let b = sample_mixture_iid(&m, 50, 42).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            assert_eq!(a.score(i), m.score(a.theta(i)).unwrap().as_slice());
        }
        assert!(sample_mixture_iid(&m, 0, 1).is_err());
    }

    #[test]
    fn equal_density_is_always_accepted() {
        assert_eq!(acceptance_probability(-3.2, -3.2), 1.0);
        assert_eq!(acceptance_probability(-3.2, 0.0), 1.0);
        assert!((acceptance_probability(0.0, -1.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    fn normal_config(seed: u64, dim: usize) -> ChainConfig {
        ChainConfig {
            n_iterations: 60_000,
            burn_in: 5_000,
            n_samples: 5_000,
            proposal_scale: 2.4 / (dim as f64).sqrt(),
            seed,
            ..ChainConfig::default()
        }
    }

    #[test]
    fn metropolis_on_standard_normal() {
        let target = IsotropicGaussian::standard(1);
        let out = metropolis(&target, &normal_config(3, 1), &[0.0]).unwrap();
        let (mean, var) = mean_and_variance(out.batch.thetas());
        // Thinned states are close to independent at stride 11.
        let se = (1.0 / out.batch.len() as f64).sqrt();
        assert!(mean.abs() < 4.0 * se * 1.5, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
        let rate = out.diagnostics.acceptance_rate();
        assert!((0.15..=0.55).contains(&rate), "acceptance {rate}");
        assert!(!out.diagnostics.stuck_warning());
    }

    #[test]
    fn acceptance_band_in_several_dimensions() {
        for dim in [2, 5, 10] {
            let target = IsotropicGaussian::standard(dim);
            let cfg = ChainConfig {
                n_iterations: 5_000,
                burn_in: 1_000,
                n_samples: 100,
                ..normal_config(dim as u64, dim)
            };
            let out = metropolis(&target, &cfg, &vec![0.0; dim]).unwrap();
            let rate = out.diagnostics.acceptance_rate();
            assert!((0.15..=0.55).contains(&rate), "dim {dim}: {rate}");
        }
    }

    #[test]
    fn metropolis_is_deterministic_and_scores_consistent() {
        let target = GaussianMixture::symmetric(2);
        let cfg = ChainConfig {
            n_iterations: 2_000,
            burn_in: 500,
            n_samples: 300,
            proposal_scale: 0.8,
            seed: 77,
            thinning: Thinning::Random,
            ..ChainConfig::default()
        };
        let a = metropolis(&target, &cfg, &[0.0, 0.0]).unwrap();
        let b = metropolis(&target, &cfg, &[0.0, 0.0]).unwrap();
        assert_eq!(a.batch, b.batch);
        assert_eq!(a.batch.len(), 300);
        for i in 0..a.batch.len() {
            assert_eq!(a.batch.score(i), target.score(a.batch.theta(i)).unwrap().as_slice());
        }
    }

    #[test]
    fn metropolis_rejects_bad_init_and_config() {
        let prior = crate::targets::GammaPrior::standard(2);
        let cfg = ChainConfig::default();
        assert_eq!(metropolis(&prior, &cfg, &[-1.0, 1.0]).unwrap_err(), Error::OutOfSupport);
        let bad = ChainConfig {
            burn_in: 30_000,
            ..ChainConfig::default()
        };
        assert!(metropolis(&prior, &bad, &[1.0, 1.0]).is_err());
        let bad_rungs = ChainConfig {
            temperature_rungs: vec![0.5, 0.2, 1.0],
            ..ChainConfig::default()
        };
        assert!(bad_rungs.validate().is_err());
    }

    #[test]
    fn stuck_chain_is_reported_not_failed() {
        let target = IsotropicGaussian::standard(1);
        let cfg = ChainConfig {
            n_iterations: 3_000,
            burn_in: 100,
            n_samples: 10,
            proposal_scale: 1e6,
            ..ChainConfig::default()
        };
        let out = metropolis(&target, &cfg, &[0.0]).unwrap();
        assert!(out.diagnostics.stuck_warning());
    }

    /// Log-likelihood that ignores θ.
    struct Flat(usize);
    impl Likelihood for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_likelihood(&self, _: &[f64]) -> Result<f64> {
            Ok(-4.0)
        }
        fn log_likelihood_grad(&self, _: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((-4.0, vec![0.0; self.0]))
        }
    }

    #[test]
    fn swaps_between_identical_rungs_always_accept() {
        let prior = IsotropicGaussian::standard(2);
        let cfg = ChainConfig {
            n_iterations: 1_000,
            burn_in: 100,
            n_samples: 50,
            proposal_scale: 1.0,
            temperature_rungs: vec![0.3, 1.0],
            swap_interval: 5,
            ..ChainConfig::default()
        };
        let out = parallel_tempering(&Flat(2), &prior, &cfg, &[0.0, 0.0]).unwrap();
        assert_eq!(out.swaps[0].0, 200);
        assert_eq!(out.swap_acceptance(0), 1.0);
        assert!(out.batches[0].f_values().iter().all(|&f| f == -4.0));
    }

    /// A mixture log-density used as a likelihood.
    struct MixtureLikelihood(GaussianMixture);
    impl Likelihood for MixtureLikelihood {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
            self.0.log_density(theta)
        }
        fn log_likelihood_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((self.0.log_density(theta)?, self.0.score(theta)?))
        }
    }

    #[test]
    fn single_rung_tempering_equals_metropolis() {
        let lik = MixtureLikelihood(GaussianMixture::symmetric(2));
        let prior = IsotropicGaussian::new(vec![0.0, 0.0], 9.0).unwrap();
        let cfg = ChainConfig {
            n_iterations: 3_000,
            burn_in: 1_000,
            n_samples: 200,
            proposal_scale: 0.7,
            seed: 5,
            ..ChainConfig::default()
        };
        let pt = parallel_tempering(&lik, &prior, &cfg, &[0.1, 0.1]).unwrap();
        let posterior = PowerPosterior::new(&lik, &prior, 1.0).unwrap();
        let mh = metropolis(&posterior, &cfg, &[0.1, 0.1]).unwrap();
        assert_eq!(pt.batches[0].thetas(), mh.batch.thetas());
        assert_eq!(pt.batches[0].scores(), mh.batch.scores());
        assert_eq!(pt.diagnostics[0], mh.diagnostics);
    }

    #[test]
    fn tempering_visits_both_modes() {
        // Modes at ±4 are separated by a deep trough at 0.
        let mixture = GaussianMixture::new(vec![vec![-4.0], vec![4.0]], 1.0, vec![0.5, 0.5]).unwrap();
        // Oracle: exact draws put half of the mass in each basin.
        let exact = sample_mixture_iid(&mixture, 10_000, 2).unwrap();
        let exact_left = exact.thetas().iter().filter(|&&t| t < 0.0).count() as f64 / 10_000.0;
        assert!((exact_left - 0.5).abs() < 0.03);

        let lik = MixtureLikelihood(mixture);
        let prior = IsotropicGaussian::new(vec![0.0], 100.0).unwrap();
        let base = ChainConfig {
            n_iterations: 20_000,
            burn_in: 2_000,
            n_samples: 2_000,
            proposal_scale: 0.1,
            seed: 13,
            swap_interval: 5,
            ..ChainConfig::default()
        };
        let left_fraction = |b: &SampleBatch| {
            b.thetas().iter().filter(|&&t| t < 0.0).count() as f64 / b.len() as f64
        };

        let tempered_cfg = ChainConfig {
            temperature_rungs: vec![0.0016, 0.0081, 0.0625, 0.3164, 1.0],
            rung_proposal_scales: vec![5.0, 3.0, 1.5, 0.8, 0.5],
            ..base.clone()
        };
        let pt = parallel_tempering(&lik, &prior, &tempered_cfg, &[4.0]).unwrap();
        let frac = left_fraction(&pt.batches[4]);
        assert!((0.2..=0.8).contains(&frac), "tempered left fraction {frac}");

        let single = parallel_tempering(&lik, &prior, &base, &[4.0]).unwrap();
        let frac = left_fraction(&single.batches[0]);
        assert!(frac == 0.0, "untempered chain left its mode: {frac}");
    }

    #[test]
    fn burn_in_adaptation_reaches_target_acceptance() {
        let target = IsotropicGaussian::standard(5);
        let cfg = ChainConfig {
            n_iterations: 20_000,
            burn_in: 5_000,
            n_samples: 1_000,
            proposal_scale: 20.0,
            adapt_burn_in: true,
            seed: 3,
            ..ChainConfig::default()
        };
        let out = metropolis(&target, &cfg, &[0.0; 5]).unwrap();
        let scale = out.diagnostics.proposal_scale;
        assert!(scale > 0.3 && scale < 3.0, "{scale}");
        let frozen = ChainConfig {
            proposal_scale: scale,
            adapt_burn_in: false,
            ..cfg
        };
        let rate = metropolis(&target, &frozen, &[0.0; 5]).unwrap().diagnostics.acceptance_rate();
        assert!((rate - TARGET_ACCEPTANCE).abs() < 0.1, "{rate}");
    }
}