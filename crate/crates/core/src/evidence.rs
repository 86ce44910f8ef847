//! Thermodynamic integration of the log evidence,
//! `log p(y) = ∫₀¹ E_t[log p(y|θ)] dt`, with the expectation at each
//! temperature optionally variance-reduced by a control variate.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::neural::{train_cncv, TrainConfig};
use crate::samplers::{mean_and_variance, SampleBatch};
use crate::seed::rng_from_seed;
use crate::stein::{
    fit_control_functional, fit_linear_cv, fit_quadratic_cv, BatchStats, CfConfig, CvModel, FitFlags,
};
use crate::targets::{check_dim, IsotropicGaussian, Likelihood, PowerPosterior};

/// Estimator of `E[f]` on one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Plain Monte Carlo.
    None,
    Linear,
    Quadratic,
    ControlFunctional(CfConfig),
    Neural(TrainConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Linear => "linear",
            Method::Quadratic => "quadratic",
            Method::ControlFunctional(_) => "cf",
            Method::Neural(_) => "cncv",
        }
    }
}

/// Fits the control variate of `method` on `train`; `None` for plain Monte Carlo.
pub fn fit_method(method: &Method, train: &SampleBatch) -> Result<Option<CvModel>> {
    match method {
        Method::None => Ok(None),
        Method::Linear => fit_linear_cv(train).map(Some),
        Method::Quadratic => fit_quadratic_cv(train).map(Some),
        Method::ControlFunctional(cfg) => fit_control_functional(train, cfg).map(Some),
        Method::Neural(cfg) => train_cncv(train, cfg).map(|t| Some(t.model)),
    }
}

/// Expectation estimate at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct RungEstimate {
    pub t: f64,
    pub method: &'static str,
    /// Rows used for fitting (zero for plain Monte Carlo).
    pub n_train: usize,
    /// Rows the statistics below are computed on.
    pub n_test: usize,
    pub raw_mean: f64,
    pub raw_var: f64,
    pub corrected_mean: f64,
    pub corrected_var: f64,
    pub ratio_train: f64,
    pub ratio_test: f64,
    pub flags: FitFlags,
    /// The fit failed and plain Monte Carlo was used instead.
    pub fallback: Option<String>,
}

impl RungEstimate {
    fn plain(t: f64, method: &'static str, stats: &BatchStats) -> Self {
        Self {
            t,
            method,
            n_train: 0,
            n_test: stats.n,
            raw_mean: stats.raw_mean,
            raw_var: stats.raw_var,
            corrected_mean: stats.raw_mean,
            corrected_var: stats.raw_var,
            ratio_train: 1.0,
            ratio_test: 1.0,
            flags: FitFlags::default(),
            fallback: None,
        }
    }

    /// Standard error of the corrected mean.
    pub fn corrected_se(&self) -> f64 {
        (self.corrected_var / self.n_test as f64).sqrt()
    }
}

/// Estimates `E[f]` on `batch`. Control-variate methods are fitted on the
/// first `train_fraction` of the rows and summarised on the rest; plain
/// Monte Carlo uses every row.
pub fn rung_expectation(
    batch: &SampleBatch,
    t: f64,
    method: &Method,
    train_fraction: f64,
) -> Result<(RungEstimate, Option<CvModel>)> {
    if batch.is_empty() {
        return Err(Error::UndersizedBatch { n: 0, required: 1 });
    }
    let zeros = vec![0.0; batch.len()];
    let all = BatchStats::from_values(batch.f_values(), &zeros)?;
    if let Method::None = method {
        return Ok((RungEstimate::plain(t, method.name(), &all), None));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig("train fraction must lie in (0, 1)".into()));
    }
    let n_train = ((batch.len() as f64) * train_fraction).round() as usize;
    let fallback = |reason: String| -> Result<(RungEstimate, Option<CvModel>)> {
        let mut est = RungEstimate::plain(t, method.name(), &all);
        est.fallback = Some(reason);
        Ok((est, None))
    };
    if n_train == 0 || n_train >= batch.len() {
        return fallback("batch too small to split".into());
    }
    let (train, test) = batch.split(n_train)?;
    match fit_and_summarise(&train, &test, t, method) {
        Ok(result) => Ok(result),
        Err(e) => fallback(alloc::format!("{e}")),
    }
}

/// Like [`rung_expectation`] with a separate test batch, e.g. from an
/// independent chain. Every method, plain Monte Carlo included, reports
/// statistics of `test`; a failed fit falls back to plain Monte Carlo.
pub fn rung_expectation_holdout(
    train: &SampleBatch,
    test: &SampleBatch,
    t: f64,
    method: &Method,
) -> Result<(RungEstimate, Option<CvModel>)> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::UndersizedBatch { n: 0, required: 1 });
    }
    let zeros = vec![0.0; test.len()];
    let plain = BatchStats::from_values(test.f_values(), &zeros)?;
    if let Method::None = method {
        return Ok((RungEstimate::plain(t, method.name(), &plain), None));
    }
    match fit_and_summarise(train, test, t, method) {
        Ok(result) => Ok(result),
        Err(e) => {
            let mut est = RungEstimate::plain(t, method.name(), &plain);
            est.fallback = Some(alloc::format!("{e}"));
            Ok((est, None))
        }
    }
}

fn fit_and_summarise(
    train: &SampleBatch,
    test: &SampleBatch,
    t: f64,
    method: &Method,
) -> Result<(RungEstimate, Option<CvModel>)> {
    let model = fit_method(method, train)?.ok_or_else(|| Error::InvalidConfig("nothing to fit".into()))?;
    let tr = BatchStats::from_values(train.f_values(), &model.evaluate_batch(train))?;
    let te = BatchStats::from_values(test.f_values(), &model.evaluate_batch(test))?;
    if !te.corrected_mean.is_finite() {
        return Err(Error::InvalidConfig("control variate is not finite on the test batch".into()));
    }
    let est = RungEstimate {
        t,
        method: method.name(),
        n_train: tr.n,
        n_test: te.n,
        raw_mean: te.raw_mean,
        raw_var: te.raw_var,
        corrected_mean: te.corrected_mean,
        corrected_var: te.corrected_var,
        ratio_train: tr.ratio,
        ratio_test: te.ratio,
        flags: model.flags,
        fallback: None,
    };
    Ok((est, Some(model)))
}

/// `t_i = (i / (n − 1))^exponent`, `i = 0..n`.
pub fn power_law_ladder(n: usize, exponent: f64) -> Result<Vec<f64>> {
    if n < 2 || !(exponent > 0.0) {
        return Err(Error::InvalidConfig("ladder needs at least two rungs and a positive exponent".into()));
    }
    Ok((0..n).map(|i| (i as f64 / (n - 1) as f64).powf(exponent)).collect())
}

/// `∫ y dt` by the trapezoidal rule on the nodes `ts`.
pub fn trapezoid(ts: &[f64], ys: &[f64]) -> f64 {
    ts.windows(2)
        .zip(ys.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    Trapezoid,
}

impl Quadrature {
    pub fn name(self) -> &'static str {
        match self {
            Quadrature::Trapezoid => "trapezoid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiEstimate {
    /// `NaN` when the surviving rungs do not span `[0, 1]`.
    pub log_evidence: f64,
    pub rungs: Vec<RungEstimate>,
    pub rule: Quadrature,
    /// Indices of rungs whose estimate failed.
    pub failed_rungs: Vec<usize>,
    /// The integral is missing or omits rungs.
    pub partial: bool,
}

/// Integrates per-rung corrected means over `t`. Each batch's `f_values`
/// must hold log-likelihoods and its scores the power-posterior scores.
pub fn ti_log_evidence(
    rungs: &[f64],
    batches: &[SampleBatch],
    method: &Method,
    train_fraction: f64,
) -> Result<TiEstimate> {
    if rungs.is_empty() || rungs.len() != batches.len() {
        return Err(Error::DimensionMismatch {
            expected: rungs.len(),
            got: batches.len(),
        });
    }
    if rungs.windows(2).any(|w| !(w[0] < w[1])) || rungs.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidConfig("rungs must be strictly increasing within [0, 1]".into()));
    }
    let mut estimates = Vec::with_capacity(rungs.len());
    let mut failed = Vec::new();
    for (k, (&t, batch)) in rungs.iter().zip(batches).enumerate() {
        match rung_expectation(batch, t, method, train_fraction) {
            Ok((est, _)) if est.corrected_mean.is_finite() => estimates.push(est),
            _ => failed.push(k),
        }
    }
    Ok(integrate_rungs(estimates, failed))
}

/// Assembles a [`TiEstimate`] from already computed rung estimates.
pub fn integrate_rungs(estimates: Vec<RungEstimate>, failed_rungs: Vec<usize>) -> TiEstimate {
    let ts: Vec<f64> = estimates.iter().map(|e| e.t).collect();
    let spans = ts.first() == Some(&0.0) && ts.last() == Some(&1.0) && ts.len() >= 2;
    let log_evidence = if spans {
        let ys: Vec<f64> = estimates.iter().map(|e| e.corrected_mean).collect();
        trapezoid(&ts, &ys)
    } else {
        f64::NAN
    };
    TiEstimate {
        log_evidence,
        partial: !spans || !failed_rungs.is_empty(),
        rungs: estimates,
        rule: Quadrature::Trapezoid,
        failed_rungs,
    }
}

/// Observations `y_j ~ N(θ, σ² I)`, `j = 1..m`, with prior `θ ~ N(m₀, τ² I)`.
/// Every power posterior is Gaussian and the evidence has a closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateGaussian {
    pub observations: Vec<Vec<f64>>,
    pub sigma: f64,
    pub prior_mean: Vec<f64>,
    pub prior_sd: f64,
}

impl ConjugateGaussian {
    pub fn new(observations: Vec<Vec<f64>>, sigma: f64, prior_mean: Vec<f64>, prior_sd: f64) -> Result<Self> {
        if observations.is_empty() || !(sigma > 0.0) || !(prior_sd > 0.0) {
            return Err(Error::InvalidConfig("need observations and positive scales".into()));
        }
        for y in &observations {
            check_dim(prior_mean.len(), y)?;
        }
        Ok(Self {
            observations,
            sigma,
            prior_mean,
            prior_sd,
        })
    }

    /// `m` observations drawn from the model at location `theta`.
    pub fn simulate(theta: &[f64], m: usize, sigma: f64, prior_mean: Vec<f64>, prior_sd: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let observations = (0..m)
            .map(|_| {
                theta
                    .iter()
                    .map(|t| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        t + sigma * z
                    })
                    .collect()
            })
            .collect();
        Self::new(observations, sigma, prior_mean, prior_sd)
    }

    pub fn prior(&self) -> IsotropicGaussian {
        IsotropicGaussian::new(self.prior_mean.clone(), self.prior_sd * self.prior_sd).expect("validated")
    }

    /// Mean and per-coordinate variance of `p(θ|y, t)`.
    pub fn power_posterior_moments(&self, t: f64) -> (Vec<f64>, f64) {
        let m = self.observations.len() as f64;
        let s2 = self.sigma * self.sigma;
        let precision = 1.0 / (self.prior_sd * self.prior_sd) + t * m / s2;
        let mean = (0..self.dim())
            .map(|k| {
                let sum: f64 = self.observations.iter().map(|y| y[k]).sum();
                (self.prior_mean[k] / (self.prior_sd * self.prior_sd) + t * sum / s2) / precision
            })
            .collect();
        (mean, 1.0 / precision)
    }

    pub fn power_posterior(&self, t: f64) -> Result<PowerPosterior<&Self, IsotropicGaussian>> {
        PowerPosterior::new(self, self.prior(), t)
    }

    /// `n` exact draws from `p(θ|y, t)` with power-posterior scores and
    /// log-likelihood values.
    pub fn sample_rung(&self, t: f64, n: usize, seed: u64) -> Result<SampleBatch> {
        let (mean, var) = self.power_posterior_moments(t);
        let sd = var.sqrt();
        let mut rng = rng_from_seed(seed);
        let mut thetas = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            for m in &mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                thetas.push(m + sd * z);
            }
        }
        let target = self.power_posterior(t)?;
        let mut batch = SampleBatch::from_target(&target, thetas, seed)?;
        let ll: Vec<f64> = (0..n)
            .map(|i| self.log_likelihood(batch.theta(i)))
            .collect::<Result<_>>()?;
        batch.set_f_values(ll)?;
        Ok(batch)
    }

    /// Closed-form `log p(y)`, coordinate by coordinate:
    /// `y_{·k} ~ N(m₀ₖ 1, σ² I + τ² 11ᵀ)`.
    pub fn log_evidence(&self) -> f64 {
        let m = self.observations.len() as f64;
        let s2 = self.sigma * self.sigma;
        let t2 = self.prior_sd * self.prior_sd;
        let log_det = m * s2.ln() + (1.0 + m * t2 / s2).ln();
        (0..self.dim())
            .map(|k| {
                let r: Vec<f64> = self.observations.iter().map(|y| y[k] - self.prior_mean[k]).collect();
                let rr: f64 = r.iter().map(|v| v * v).sum();
                let rs: f64 = r.iter().sum();
                let quad = rr / s2 - t2 * rs * rs / (s2 * (s2 + m * t2));
                -0.5 * (m * (2.0 * core::f64::consts::PI).ln() + log_det + quad)
            })
            .sum()
    }

    /// Exact `E_t[log p(y|θ)]`.
    pub fn expected_log_likelihood(&self, t: f64) -> f64 {
        let (mean, var) = self.power_posterior_moments(t);
        let m = self.observations.len() as f64;
        let s2 = self.sigma * self.sigma;
        let d = self.dim() as f64;
        let sq: f64 = self
            .observations
            .iter()
            .map(|y| y.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        -0.5 * m * d * (2.0 * core::f64::consts::PI * s2).ln() - 0.5 * (sq + m * d * var) / s2
    }
}

impl Likelihood for ConjugateGaussian {
    fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        self.log_likelihood_grad(theta).map(|(ll, _)| ll)
    }

    fn log_likelihood_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim(), theta)?;
        let s2 = self.sigma * self.sigma;
        let n_obs = (self.observations.len() * self.dim()) as f64;
        let mut ll = -0.5 * n_obs * (2.0 * core::f64::consts::PI * s2).ln();
        let mut grad = vec![0.0; self.dim()];
        for y in &self.observations {
            for k in 0..self.dim() {
                let r = y[k] - theta[k];
                ll -= 0.5 * r * r / s2;
                grad[k] += r / s2;
            }
        }
        Ok((ll, grad))
    }
}

/// Sample mean and variance of `f` on a batch; a convenience for reports.
pub fn plain_moments(batch: &SampleBatch) -> (f64, f64) {
    mean_and_variance(batch.f_values())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ConjugateGaussian {
        ConjugateGaussian::simulate(&[0.7, -0.4], 20, 1.0, vec![0.0, 0.0], 1.0, 17).unwrap()
    }

    fn ti(model: &ConjugateGaussian, n_rungs: usize, seed: u64) -> TiEstimate {
        let rungs = power_law_ladder(n_rungs, 5.0).unwrap();
        let batches: Vec<SampleBatch> = rungs
            .iter()
            .enumerate()
            .map(|(k, &t)| model.sample_rung(t, 2000, seed + k as u64).unwrap())
            .collect();
        ti_log_evidence(&rungs, &batches, &Method::None, 0.5).unwrap()
    }

    #[test]
    fn ladder_shape() {
        let l = power_law_ladder(5, 5.0).unwrap();
        assert_eq!(l[0], 0.0);
        assert_eq!(l[4], 1.0);
        assert!((l[2] - 0.5f64.powi(5)).abs() < 1e-15);
        assert!(power_law_ladder(1, 5.0).is_err());
    }

    #[test]
    fn trapezoid_is_exact_on_constants_and_linear() {
        let ts = power_law_ladder(7, 3.0).unwrap();
        assert!((trapezoid(&ts, &[2.5; 7]) - 2.5).abs() < 1e-15);
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t - 1.0).collect();
        assert!((trapezoid(&ts, &ys) - 0.5).abs() < 1e-15);
        let scaled: Vec<f64> = ys.iter().map(|y| 4.0 * y).collect();
        assert!((trapezoid(&ts, &scaled) - 4.0 * trapezoid(&ts, &ys)).abs() < 1e-14);
    }

    #[test]
    fn constant_integrand_gives_constant_evidence() {
        let rungs = [0.0, 0.3, 1.0];
        let batches: Vec<SampleBatch> = rungs
            .iter()
            .map(|_| {
                let mut b = SampleBatch::from_target(&IsotropicGaussian::standard(1), vec![0.1, 0.2, 0.3, 0.4], 0).unwrap();
                b.fill_f(|_| -3.0);
                b
            })
            .collect();
        let est = ti_log_evidence(&rungs, &batches, &Method::None, 0.5).unwrap();
        assert!((est.log_evidence + 3.0).abs() < 1e-15);
        assert!(!est.partial);
        assert_eq!(est.rungs[1].raw_var, 0.0);
    }

    #[test]
    fn missing_endpoint_is_partial() {
        let mut b = SampleBatch::from_target(&IsotropicGaussian::standard(1), vec![0.1, 0.2], 0).unwrap();
        b.fill_f(|_| 1.0);
        let est = ti_log_evidence(&[1.0], &[b], &Method::None, 0.5).unwrap();
        assert!(est.partial);
        assert!(est.log_evidence.is_nan());
        assert_eq!(est.rungs.len(), 1);
    }

    #[test]
    fn closed_form_evidence_matches_exact_quadrature() {
        let model = model();
        // Fine trapezoid over the exact integrand.
        let ts = power_law_ladder(4001, 3.0).unwrap();
        let ys: Vec<f64> = ts.iter().map(|&t| model.expected_log_likelihood(t)).collect();
        let quad = trapezoid(&ts, &ys);
        assert!((quad - model.log_evidence()).abs() < 1e-5 * model.log_evidence().abs());
    }

    #[test]
    fn exact_rung_samples_have_the_right_mean() {
        let model = model();
        let batch = model.sample_rung(0.3, 20_000, 4).unwrap();
        let (m, v) = plain_moments(&batch);
        let exact = model.expected_log_likelihood(0.3);
        assert!((m - exact).abs() < 4.0 * (v / 20_000.0).sqrt());
    }

    #[test]
    fn ti_reproduces_closed_form() {
        let model = model();
        let oracle = model.log_evidence();
        let fine = ti(&model, 30, 100);
        let coarse = ti(&model, 10, 100);
        assert!((fine.log_evidence - oracle).abs() / oracle.abs() < 0.02);
        assert!((fine.log_evidence - oracle).abs() < (coarse.log_evidence - oracle).abs());
    }

    #[test]
    fn control_variates_stay_unbiased_per_rung() {
        let model = model();
        let batch = model.sample_rung(0.5, 2000, 9).unwrap();
        let exact = model.expected_log_likelihood(0.5);
        for method in [Method::Linear, Method::Quadratic] {
            let (est, _) = rung_expectation(&batch, 0.5, &method, 0.5).unwrap();
            let se = (est.corrected_var / est.n_test as f64).sqrt();
            assert!((est.corrected_mean - exact).abs() < 4.0 * se.max(1e-12), "{}", method.name());
            assert!(est.ratio_test < 1.0);
        }
        // The log-likelihood is quadratic in θ, so the quadratic fit is exact.
        let (est, _) = rung_expectation(&batch, 0.5, &Method::Quadratic, 0.5).unwrap();
        assert!(est.ratio_test < 1e-10);
    }

    #[test]
    fn failed_fit_falls_back_to_plain() {
        let model = model();
        let batch = model.sample_rung(0.5, 6, 9).unwrap();
        let (est, fitted) = rung_expectation(&batch, 0.5, &Method::Quadratic, 0.5).unwrap();
        assert!(est.fallback.is_some());
        assert!(fitted.is_none());
        assert_eq!(est.corrected_mean, est.raw_mean);
    }

    #[test]
    fn holdout_reports_test_statistics() {
        let model = model();
        let train = model.sample_rung(0.5, 500, 1).unwrap();
        let test = model.sample_rung(0.5, 300, 2).unwrap();
        let (plain, _) = rung_expectation_holdout(&train, &test, 0.5, &Method::None).unwrap();
        assert_eq!(plain.n_test, 300);
        assert_eq!(plain.raw_mean, plain_moments(&test).0);
        let (est, fitted) = rung_expectation_holdout(&train, &test, 0.5, &Method::Linear).unwrap();
        assert!(fitted.is_some());
        assert_eq!(est.n_train, 500);
        assert_eq!(est.raw_mean, plain.raw_mean);
        assert!(est.ratio_test < 1.0);
    }
}