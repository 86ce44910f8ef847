//! Experiment configuration.
//!
//! A config is a TOML file with top-level run keys and one table per
//! experiment family. Unknown keys anywhere are rejected. Every field has a
//! default, so a file naming only `kind` is valid; `config.echo` records the
//! fully expanded form, which parses back to the same value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ncv_core::evidence::Method;
use ncv_core::neural::{Activation, MuInit, Optimizer, TrainConfig};
use ncv_core::stein::{Bandwidth, CfConfig};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Synthetic,
    Ablation,
    GoodwinTi,
    ConjugateCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Synthetic => "synthetic",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::GoodwinTi => "goodwin-ti",
            ExperimentKind::ConjugateCheck => "conjugate-check",
        }
    }

    /// Tag mixed into every derived seed so families never share streams.
    pub fn seed_tag(self) -> u64 {
        match self {
            ExperimentKind::Synthetic => 1,
            ExperimentKind::Ablation => 2,
            ExperimentKind::GoodwinTi => 3,
            ExperimentKind::ConjugateCheck => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    None,
    Linear,
    Quadratic,
    Cf,
    Cncv,
}

impl MethodName {
    pub fn name(self) -> &'static str {
        match self {
            MethodName::None => "none",
            MethodName::Linear => "linear",
            MethodName::Quadratic => "quadratic",
            MethodName::Cf => "cf",
            MethodName::Cncv => "cncv",
        }
    }

    pub fn index(self) -> u64 {
        self as u64
    }
}

/// The four training schemes of the regularisation/centering ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// `λ = 0`, `μ = 0`.
    Plain,
    /// `λ > 0`, `μ = 0`.
    Regularized,
    /// `λ = 0`, `μ` learned.
    Centered,
    /// `λ > 0`, `μ` learned.
    Constrained,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Plain => "ncv-plain",
            Scheme::Regularized => "ncv-regularized",
            Scheme::Centered => "ncv-centered",
            Scheme::Constrained => "cncv",
        }
    }

    pub fn regularized(self) -> bool {
        matches!(self, Scheme::Regularized | Scheme::Constrained)
    }

    pub fn centered(self) -> bool {
        matches!(self, Scheme::Centered | Scheme::Constrained)
    }

    pub fn all() -> [Scheme; 4] {
        [Scheme::Plain, Scheme::Regularized, Scheme::Centered, Scheme::Constrained]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuInitName {
    Zero,
    SampleMean,
    Pretrain,
}

/// Neural control variate hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: ActivationName,
    pub lambda: f64,
    pub centered: bool,
    pub mu_init: MuInitName,
    pub pretrain_lambda: f64,
    pub optimizer: OptimizerName,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub standardize: bool,
    /// When nonempty, each listed `λ` is trained as its own method variant
    /// and `lambda` is unused.
    pub lambda_sweep: Vec<f64>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![40, 40],
            activation: ActivationName::Sigmoid,
            lambda: 0.01,
            centered: true,
            mu_init: MuInitName::SampleMean,
            pretrain_lambda: 1.0,
            optimizer: OptimizerName::Adam,
            learning_rate: 3e-3,
            epochs: 200,
            minibatch: 64,
            standardize: true,
            lambda_sweep: Vec::new(),
        }
    }
}

impl NetConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            activation: match self.activation {
                ActivationName::Sigmoid => Activation::Sigmoid,
                ActivationName::Tanh => Activation::Tanh,
            },
            lambda: self.lambda,
            centered: self.centered,
            mu_init: match self.mu_init {
                MuInitName::Zero => MuInit::Zero,
                MuInitName::SampleMean => MuInit::SampleMean,
                MuInitName::Pretrain => MuInit::Pretrain {
                    lambda: self.pretrain_lambda,
                },
            },
            optimizer: match self.optimizer {
                OptimizerName::Sgd => Optimizer::Sgd,
                OptimizerName::Adam => Optimizer::adam(),
            },
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            minibatch: self.minibatch,
            seed,
            standardize: self.standardize,
        }
    }
}

/// Kernel control functional settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Fixed length scale; the median heuristic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    pub ridge: f64,
    pub max_ridge: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        let cf = CfConfig::default();
        Self {
            bandwidth: None,
            ridge: cf.ridge,
            max_ridge: cf.max_ridge,
        }
    }
}

impl KernelConfig {
    pub fn cf_config(&self) -> CfConfig {
        CfConfig {
            bandwidth: self.bandwidth.map_or(Bandwidth::Median, Bandwidth::Fixed),
            ridge: self.ridge,
            max_ridge: self.max_ridge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Dimension of the sample-size sweep.
    pub fixed_dim: usize,
    pub n_grid: Vec<usize>,
    /// Sample size of the dimension sweep.
    pub fixed_n: usize,
    pub dim_grid: Vec<usize>,
    pub n_test: usize,
    pub methods: Vec<MethodName>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            fixed_dim: 10,
            n_grid: vec![500, 1000, 2000, 5000],
            fixed_n: 5000,
            dim_grid: vec![10, 20, 30],
            n_test: 500,
            methods: vec![MethodName::Linear, MethodName::Quadratic, MethodName::Cf, MethodName::Cncv],
        }
    }
}

impl SyntheticConfig {
    /// `(D, n)` cells: the sample-size sweep, then the dimension sweep,
    /// without duplicates.
    pub fn settings(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self.n_grid.iter().map(|&n| (self.fixed_dim, n)).collect();
        for &d in &self.dim_grid {
            if !out.contains(&(d, self.fixed_n)) {
                out.push((d, self.fixed_n));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub mu0: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// `λ` of the regularised schemes.
    pub lambda: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            n_train: 500,
            n_test: 500,
            mu0: (0..=9).map(f64::from).collect(),
            schemes: Scheme::all().to_vec(),
            lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoodwinConfig {
    /// Numbers of species `g`; the parameter dimension is `g + 2`.
    pub states: Vec<usize>,
    pub rho: u32,
    pub sigma: f64,
    pub step: f64,
    /// Dataset to load instead of simulating, one per entry of `states`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<String>,
    /// Tempering ladder; the TI estimate needs it to start at 0.
    pub ladder: Vec<f64>,
    /// Retained states per rung for fitting, from one tempering run.
    pub n_train: usize,
    /// Retained states per rung for testing, from an independent run.
    pub n_test: usize,
    pub burn_in: usize,
    /// Iterations between retained states.
    pub thin: usize,
    pub swap_interval: usize,
    pub proposal_scale: f64,
    pub methods: Vec<MethodName>,
}

impl Default for GoodwinConfig {
    fn default() -> Self {
        Self {
            states: vec![3, 4],
            rho: ncv_core::goodwin::DEFAULT_RHO,
            sigma: ncv_core::goodwin::DEFAULT_SIGMA,
            step: ncv_core::goodwin::DEFAULT_STEP,
            data_dir: None,
            ladder: vec![0.0, 0.01, 0.03, 0.06, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
            n_train: 1000,
            n_test: 1000,
            burn_in: 5000,
            thin: 10,
            swap_interval: 5,
            proposal_scale: 0.05,
            methods: vec![
                MethodName::None,
                MethodName::Linear,
                MethodName::Quadratic,
                MethodName::Cf,
                MethodName::Cncv,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConjugateConfig {
    /// True location used to simulate the observations.
    pub location: Vec<f64>,
    pub observations: usize,
    pub sigma: f64,
    pub prior_sd: f64,
    /// Ladder sizes to compare.
    pub rung_counts: Vec<usize>,
    pub ladder_exponent: f64,
    pub samples_per_rung: usize,
    pub methods: Vec<MethodName>,
}

impl Default for ConjugateConfig {
    fn default() -> Self {
        Self {
            location: vec![0.7, -0.4],
            observations: 20,
            sigma: 1.0,
            prior_sd: 1.0,
            rung_counts: vec![10, 30],
            ladder_exponent: 5.0,
            samples_per_rung: 2000,
            methods: vec![MethodName::None],
        }
    }
}

/// One estimator as it appears in the output: a method, plus the `λ` of a
/// swept CNCV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub name: MethodName,
    pub lambda: Option<f64>,
    /// Position in the sweep.
    pub sweep_index: u64,
}

impl Variant {
    pub fn label(&self) -> String {
        match self.lambda {
            Some(l) => format!("{}:lambda={l}", self.name.name()),
            None => self.name.name().to_string(),
        }
    }

    /// Seed path below the data seed; unswept methods keep `[2, method]`.
    pub fn seed_path(&self) -> Vec<u64> {
        match self.lambda {
            Some(_) => vec![2, self.name.index(), self.sweep_index],
            None => vec![2, self.name.index()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub master_seed: u64,
    /// Independent replications of every setting.
    #[serde(default = "one")]
    pub replications: usize,
    /// Fraction of a single batch used for fitting when no separate test
    /// batch exists.
    #[serde(default = "half")]
    pub train_fraction: f64,
    /// Write fitted models to `checkpoints/`.
    #[serde(default = "yes")]
    pub checkpoints: bool,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub goodwin: GoodwinConfig,
    #[serde(default)]
    pub conjugate: ConjugateConfig,
    #[serde(default)]
    pub cncv: NetConfig,
    #[serde(default)]
    pub cf: KernelConfig,
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            master_seed: 0,
            replications: 1,
            train_fraction: 0.5,
            checkpoints: true,
            synthetic: SyntheticConfig::default(),
            ablation: AblationConfig::default(),
            goodwin: GoodwinConfig::default(),
            conjugate: ConjugateConfig::default(),
            cncv: NetConfig::default(),
            cf: KernelConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// The method object for a named estimator at a given seed.
    pub fn method(&self, name: MethodName, seed: u64) -> Method {
        match name {
            MethodName::None => Method::None,
            MethodName::Linear => Method::Linear,
            MethodName::Quadratic => Method::Quadratic,
            MethodName::Cf => Method::ControlFunctional(self.cf.cf_config()),
            MethodName::Cncv => Method::Neural(self.cncv.train_config(seed)),
        }
    }

    /// Expands `methods`, giving CNCV one variant per swept `λ`.
    pub fn variants(&self, methods: &[MethodName]) -> Vec<Variant> {
        let mut out = Vec::new();
        for &name in methods {
            if name == MethodName::Cncv && !self.cncv.lambda_sweep.is_empty() {
                for (k, &l) in self.cncv.lambda_sweep.iter().enumerate() {
                    out.push(Variant {
                        name,
                        lambda: Some(l),
                        sweep_index: k as u64,
                    });
                }
            } else {
                out.push(Variant {
                    name,
                    lambda: None,
                    sweep_index: 0,
                });
            }
        }
        out
    }

    pub fn variant_method(&self, variant: &Variant, seed: u64) -> Method {
        let mut method = self.method(variant.name, seed);
        if let (Method::Neural(train), Some(l)) = (&mut method, variant.lambda) {
            train.lambda = l;
        }
        method
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        self.cncv
            .train_config(0)
            .validate()
            .map_err(|e| HarnessError::Config(format!("[cncv] {e}")))?;
        for &l in &self.cncv.lambda_sweep {
            let mut train = self.cncv.train_config(0);
            train.lambda = l;
            train
                .validate()
                .map_err(|e| HarnessError::Config(format!("[cncv] lambda_sweep entry {l}: {e}")))?;
        }
        if !(self.cf.ridge > 0.0) || self.cf.max_ridge < self.cf.ridge {
            return bad("[cf] needs 0 < ridge <= max_ridge");
        }
        match self.kind {
            ExperimentKind::Synthetic => {
                let s = &self.synthetic;
                if s.settings().iter().any(|&(d, n)| d == 0 || n == 0) || s.n_test == 0 {
                    return bad("[synthetic] sizes and dimensions must be at least 1");
                }
                if s.methods.is_empty() {
                    return bad("[synthetic] needs at least one method");
                }
            }
            ExperimentKind::Ablation => {
                let a = &self.ablation;
                if a.dim == 0 || a.n_train == 0 || a.n_test == 0 || a.schemes.is_empty() {
                    return bad("[ablation] sizes must be at least 1 and schemes nonempty");
                }
                if !(a.lambda > 0.0) {
                    return bad("[ablation] lambda must be positive");
                }
            }
            ExperimentKind::GoodwinTi => {
                let g = &self.goodwin;
                if g.states.iter().any(|&s| s < 2) || g.states.is_empty() {
                    return bad("[goodwin] every entry of states must be at least 2");
                }
                if g.ladder.is_empty()
                    || g.ladder.windows(2).any(|w| !(w[0] < w[1]))
                    || !(g.ladder[0] >= 0.0)
                    || g.ladder[g.ladder.len() - 1] != 1.0
                {
                    return bad("[goodwin] ladder must increase strictly within [0, 1] and end at 1");
                }
                if g.n_train == 0 || g.n_test == 0 || g.thin == 0 || g.swap_interval == 0 || g.rho == 0 {
                    return bad("[goodwin] sizes, thin, swap_interval and rho must be at least 1");
                }
                if !(g.sigma > 0.0 && g.step > 0.0 && g.proposal_scale > 0.0) {
                    return bad("[goodwin] sigma, step and proposal_scale must be positive");
                }
                if g.methods.is_empty() {
                    return bad("[goodwin] needs at least one method");
                }
            }
            ExperimentKind::ConjugateCheck => {
                let c = &self.conjugate;
                if c.location.is_empty() || c.observations == 0 || c.samples_per_rung < 2 {
                    return bad("[conjugate] needs a location, observations and two samples per rung");
                }
                if c.rung_counts.iter().any(|&n| n < 2) || c.rung_counts.is_empty() {
                    return bad("[conjugate] every ladder needs at least two rungs");
                }
                if !(c.sigma > 0.0 && c.prior_sd > 0.0 && c.ladder_exponent > 0.0) {
                    return bad("[conjugate] sigma, prior_sd and ladder_exponent must be positive");
                }
                if c.methods.is_empty() {
                    return bad("[conjugate] needs at least one method");
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_expands_to_defaults() {
        let c = ExperimentConfig::from_toml("kind = \"ablation\"\n").unwrap();
        assert_eq!(c, ExperimentConfig::new(ExperimentKind::Ablation));
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = ExperimentConfig::new(ExperimentKind::GoodwinTi);
        c.master_seed = 12345678901234;
        c.cf.bandwidth = Some(0.37);
        c.goodwin.data_dir = Some("data".into());
        c.cncv.learning_rate = 0.1 + 0.2;
        c.ablation.mu0 = vec![0.0, 1.0 / 3.0, 9.0];
        let text = c.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "kind = \"synthetic\"\nseeed = 3\n",
            "kind = \"synthetic\"\n[cncv]\nlearning_rat = 0.1\n",
            "kind = \"synthetic\"\n[nonsense]\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "kind = \"goodwin-ti\"\n[goodwin]\nladder = [0.0, 0.5]\n",
            "kind = \"synthetic\"\n[synthetic]\nn_grid = [0]\n",
            "kind = \"ablation\"\nreplications = 0\n",
            "kind = \"conjugate-check\"\n[conjugate]\nrung_counts = [1]\n",
            "kind = \"synthetic\"\n[synthetic]\nmethods = [\"bogus\"]\n",
            "kind = \"synthetic\"\n[cncv]\nlambda_sweep = [0.1, -1.0]\n",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn synthetic_settings_skip_duplicates() {
        let s = SyntheticConfig::default();
        let settings = s.settings();
        assert_eq!(settings.iter().filter(|&&c| c == (10, 5000)).count(), 1);
        assert_eq!(settings.len(), 4 + 2);
    }

    #[test]
    fn lambda_sweep_expands_cncv_only() {
        let mut c = ExperimentConfig::new(ExperimentKind::Synthetic);
        c.cncv.lambda_sweep = vec![1.0, 0.1, 0.01];
        let variants = c.variants(&[MethodName::Linear, MethodName::Cncv]);
        let labels: Vec<String> = variants.iter().map(Variant::label).collect();
        assert_eq!(labels, ["linear", "cncv:lambda=1", "cncv:lambda=0.1", "cncv:lambda=0.01"]);
        match c.variant_method(&variants[2], 5) {
            Method::Neural(train) => assert_eq!((train.lambda, train.seed), (0.1, 5)),
            other => panic!("{other:?}"),
        }
        assert_eq!(variants[0].seed_path(), [2, MethodName::Linear.index()]);
        assert_ne!(variants[1].seed_path(), variants[2].seed_path());
    }
}
