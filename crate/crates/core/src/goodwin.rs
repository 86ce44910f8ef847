//! Goodwin oscillator: a negative-feedback chain of `g` species,
//!
//! ```text
//! dx₁/ds = a₁ / (1 + a₂ x_g^ρ) − α x₁
//! dxᵢ/ds = k_{i−1} x_{i−1} − α xᵢ,   i = 2..g
//! ```
//!
//! integrated by classical fourth-order Runge–Kutta on a fixed grid, with
//! forward sensitivities `∂x/∂θ` carried through the same stages. The
//! parameter vector is ordered `θ = (a₁, a₂, α, k₁, …, k_{g−1})`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::targets::{check_dim, GammaPrior, Likelihood, PowerPosterior};

/// Default Hill exponent.
pub const DEFAULT_RHO: u32 = 8;
/// Default integration step.
pub const DEFAULT_STEP: f64 = 0.05;
/// Observation noise of the generated data.
pub const DEFAULT_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GoodwinParams {
    pub a1: f64,
    pub a2: f64,
    pub alpha: f64,
    /// `k₁ … k_{g−1}`.
    pub k: Vec<f64>,
    pub rho: u32,
}

impl GoodwinParams {
    /// Reads `(a₁, a₂, α, k₁, …)`; the number of states is `θ.len() − 2`.
    pub fn from_vector(theta: &[f64], rho: u32) -> Result<Self> {
        if theta.len() < 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                got: theta.len(),
            });
        }
        let params = Self {
            a1: theta[0],
            a2: theta[1],
            alpha: theta[2],
            k: theta[3..].to_vec(),
            rho,
        };
        params.validate()?;
        Ok(params)
    }

    /// The data-generating values `a₁ = 1, a₂ = 3, k₁ = 2, kᵢ = 1, α = 0.5`.
    pub fn reference(n_states: usize) -> Self {
        let mut k = vec![1.0; n_states.max(2) - 1];
        k[0] = 2.0;
        Self {
            a1: 1.0,
            a2: 3.0,
            alpha: 0.5,
            k,
            rho: DEFAULT_RHO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.a1, self.a2, self.alpha]
            .iter()
            .chain(&self.k)
            .all(|v| *v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(Error::OutOfSupport);
        }
        if self.rho == 0 || self.k.is_empty() {
            return Err(Error::InvalidConfig("need rho >= 1 and at least two states".into()));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.k.len() + 1
    }

    pub fn dim(&self) -> usize {
        self.k.len() + 3
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![self.a1, self.a2, self.alpha];
        v.extend_from_slice(&self.k);
        v
    }
}

/// Right-hand side of the oscillator at state `x`.
pub fn goodwin_rhs(x: &[f64], params: &GoodwinParams) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    rhs_into(x, params, &mut out);
    out
}

fn rhs_into(x: &[f64], p: &GoodwinParams, out: &mut [f64]) {
    let g = x.len();
    out[0] = p.a1 / (1.0 + p.a2 * x[g - 1].powi(p.rho as i32)) - p.alpha * x[0];
    for i in 1..g {
        out[i] = p.k[i - 1] * x[i - 1] - p.alpha * x[i];
    }
}

/// Augmented derivative: state, then sensitivities `S` (`g x D`, row-major)
/// with `dS/ds = J_x S + J_θ`.
fn augmented_rhs(y: &[f64], p: &GoodwinParams, out: &mut [f64]) {
    let g = p.n_states();
    let d = p.dim();
    let (x, s) = y.split_at(g);
    rhs_into(x, p, &mut out[..g]);
    let ds = &mut out[g..];

    let xg = x[g - 1];
    let xg_rho = xg.powi(p.rho as i32);
    let denom = 1.0 + p.a2 * xg_rho;
    let xg_rho_m1 = if p.rho == 1 { 1.0 } else { xg.powi(p.rho as i32 - 1) };
    // ∂(dx₁)/∂x_g
    let feedback = -p.a1 * p.a2 * p.rho as f64 * xg_rho_m1 / (denom * denom);

    for j in 0..d {
        ds[j] = -p.alpha * s[j] + feedback * s[(g - 1) * d + j];
    }
    ds[0] += 1.0 / denom;
    ds[1] += -p.a1 * xg_rho / (denom * denom);
    ds[2] += -x[0];
    for i in 1..g {
        for j in 0..d {
            ds[i * d + j] = p.k[i - 1] * s[(i - 1) * d + j] - p.alpha * s[i * d + j];
        }
        ds[i * d + 2] += -x[i];
        ds[i * d + 3 + (i - 1)] += x[i - 1];
    }
}

/// States on the integration grid, optionally with sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_states: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    /// `|times| x g`, row-major.
    pub states: Vec<f64>,
    /// `|times| x g x D`, row-major, when requested.
    pub sensitivities: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn state(&self, step: usize) -> &[f64] {
        &self.states[step * self.n_states..(step + 1) * self.n_states]
    }

    /// `∂x/∂θ` at grid index `step`, `g x D` row-major.
    pub fn sensitivity(&self, step: usize) -> Option<&[f64]> {
        let block = self.n_states * self.dim;
        self.sensitivities
            .as_ref()
            .map(|s| &s[step * block..(step + 1) * block])
    }

    /// Grid index of time `s`, if `s` lies on the grid.
    pub fn index_of(&self, s: f64) -> Option<usize> {
        let step = self.times.get(1)? - self.times[0];
        let idx = (s - self.times[0]) / step;
        let rounded = idx.round();
        ((idx - rounded).abs() < 1e-6 && rounded >= 0.0 && (rounded as usize) < self.times.len())
            .then_some(rounded as usize)
    }
}

/// Fixed-step RK4 from `s = 0` to `t_end`.
pub fn integrate(
    params: &GoodwinParams,
    x0: &[f64],
    t_end: f64,
    step: f64,
    with_sensitivities: bool,
) -> Result<Trajectory> {
    params.validate()?;
    let g = params.n_states();
    let d = params.dim();
    check_dim(g, x0)?;
    if !(step > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidConfig("step and horizon must be positive".into()));
    }
    let n_steps = (t_end / step).round() as usize;
    if ((n_steps as f64) * step - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidConfig(format!("horizon {t_end} is not a multiple of step {step}")));
    }

    let width = if with_sensitivities { g + g * d } else { g };
    let mut y = vec![0.0; width];
    y[..g].copy_from_slice(x0);
    let rhs = |y: &[f64], out: &mut [f64]| {
        if with_sensitivities {
            augmented_rhs(y, params, out);
        } else {
            rhs_into(y, params, out);
        }
    };

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity((n_steps + 1) * g);
    let mut sens = with_sensitivities.then(|| Vec::with_capacity((n_steps + 1) * g * d));
    let mut record = |n: usize, y: &[f64], times: &mut Vec<f64>, states: &mut Vec<f64>| {
        times.push(n as f64 * step);
        states.extend_from_slice(&y[..g]);
        if let Some(s) = sens.as_mut() {
            s.extend_from_slice(&y[g..]);
        }
    };
    record(0, &y, &mut times, &mut states);

    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; width], vec![0.0; width], vec![0.0; width], vec![0.0; width], vec![0.0; width]);
    for n in 0..n_steps {
        rhs(&y, &mut k1);
        for i in 0..width {
            tmp[i] = y[i] + 0.5 * step * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..width {
            tmp[i] = y[i] + 0.5 * step * k2[i];
        }
        rhs(&tmp, &mut k3);
        for i in 0..width {
            tmp[i] = y[i] + step * k3[i];
        }
        rhs(&tmp, &mut k4);
        for i in 0..width {
            y[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                last_good_time: n as f64 * step,
            });
        }
        record(n + 1, &y, &mut times, &mut states);
    }
    Ok(Trajectory {
        n_states: g,
        dim: d,
        times,
        states,
        sensitivities: sens,
    })
}

/// Noisy observations of all species at integer times.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodwinData {
    pub times: Vec<f64>,
    /// `|times| x g`, row-major.
    pub observations: Vec<f64>,
    pub sigma: f64,
    pub generating: GoodwinParams,
    pub seed: u64,
}

impl GoodwinData {
    /// Simulates from `params` with `x₀ = 0` and adds `N(0, σ²)` noise at
    /// `s = 41, …, 80`.
    pub fn generate(params: &GoodwinParams, sigma: f64, seed: u64) -> Result<Self> {
        let times: Vec<f64> = (41..=80).map(f64::from).collect();
        let g = params.n_states();
        let traj = integrate(params, &vec![0.0; g], 80.0, DEFAULT_STEP, false)?;
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        let mut rng = rng_from_seed(seed);
        let mut observations = Vec::with_capacity(times.len() * g);
        for &s in &times {
            let idx = traj.index_of(s).expect("integer times lie on the grid");
            for &x in traj.state(idx) {
                observations.push(x + noise.sample(&mut rng));
            }
        }
        Ok(Self {
            times,
            observations,
            sigma,
            generating: params.clone(),
            seed,
        })
    }

    pub fn n_states(&self) -> usize {
        self.generating.n_states()
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        let g = self.n_states();
        &self.observations[i * g..(i + 1) * g]
    }
}

/// Gaussian likelihood of [`GoodwinData`] as a function of `θ`.
#[derive(Debug, Clone)]
pub struct GoodwinModel {
    pub data: GoodwinData,
    pub rho: u32,
    pub step: f64,
}

impl GoodwinModel {
    pub fn new(data: GoodwinData) -> Self {
        let rho = data.generating.rho;
        Self {
            data,
            rho,
            step: DEFAULT_STEP,
        }
    }

    fn evaluate(&self, theta: &[f64], with_gradient: bool) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim(), theta)?;
        let params = GoodwinParams::from_vector(theta, self.rho)?;
        let g = params.n_states();
        let d = params.dim();
        let t_end = self.data.times.last().copied().unwrap_or(0.0);
        let traj = match integrate(&params, &vec![0.0; g], t_end, self.step, with_gradient) {
            Ok(traj) => traj,
            Err(Error::BlowUp { .. }) => return Ok((f64::NEG_INFINITY, vec![0.0; d])),
            Err(e) => return Err(e),
        };
        let var = self.data.sigma * self.data.sigma;
        let n_obs = self.data.times.len() * g;
        let mut ll = -0.5 * n_obs as f64 * (2.0 * core::f64::consts::PI * var).ln();
        let mut grad = vec![0.0; d];
        for (i, &s) in self.data.times.iter().enumerate() {
            let idx = traj
                .index_of(s)
                .ok_or_else(|| Error::InvalidConfig(format!("observation time {s} is off the grid")))?;
            let x = traj.state(idx);
            let y = self.data.observation(i);
            for m in 0..g {
                let r = y[m] - x[m];
                ll -= 0.5 * r * r / var;
                if let Some(sens) = traj.sensitivity(idx) {
                    for j in 0..d {
                        grad[j] += r * sens[m * d + j] / var;
                    }
                }
            }
        }
        Ok((ll, grad))
    }
}

impl Likelihood for GoodwinModel {
    fn dim(&self) -> usize {
        self.data.generating.dim()
    }

    fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        self.evaluate(theta, false).map(|(ll, _)| ll)
    }

    fn log_likelihood_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluate(theta, true)
    }
}

/// `p(y|θ)ᵗ p(θ)` with independent `Gamma(2, 1)` priors.
pub fn goodwin_power_posterior(t: f64, model: &GoodwinModel) -> Result<PowerPosterior<&GoodwinModel, GammaPrior>> {
    PowerPosterior::new(model, GammaPrior::standard(model.dim()), t)
}
