//! Experiment execution.
//!
//! Each experiment expands its config into independent cells, evaluates
//! them on a worker pool and emits rows in cell order, so the output never
//! depends on scheduling. Seeds come from the master seed through
//! [`derive_seed`] with these paths (`tag` is the experiment's seed tag):
//!
//! | experiment | data | fitting |
//! |---|---|---|
//! | synthetic | `[tag, D, n, rep]`, then `[0]` train / `[1]` test | data seed + `[2, method]` |
//! | ablation | `[tag, D, n_train, rep]`, then `[0]` / `[1]` | data seed + `[2, scheme]` |
//! | goodwin-ti | dataset `[tag, g]`; tempering `[tag, g, rep, 0 or 1]` | `[tag, g, rep, 2, rung, method]` |
//! | conjugate-check | observations `[tag]`; rung batch `[tag, rungs, rep, k]` | batch seed + `[2, method]` |
//!
//! A setting's data seed does not depend on the method, so every method in
//! a setting sees the same samples.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use ncv_core::evidence::{integrate_rungs, power_law_ladder, rung_expectation, rung_expectation_holdout};
use ncv_core::evidence::{ConjugateGaussian, Method, RungEstimate};
use ncv_core::goodwin::{GoodwinData, GoodwinModel, GoodwinParams};
use ncv_core::neural::MuInit;
use ncv_core::samplers::{parallel_tempering, sample_mixture_iid, ChainConfig, SampleBatch, TemperingOutput};
use ncv_core::seed::{derive_seed, splitmix64};
use ncv_core::stein::CvModel;
use ncv_core::targets::{GammaPrior, GaussianMixture};

use crate::config::{ExperimentConfig, ExperimentKind, Scheme};
use crate::io::{self, ResultRow, RungRow, TiRow};
use crate::HarnessError;

/// Everything an experiment produces; [`write_outputs`] puts it on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub results: Vec<ResultRow>,
    pub rungs: Vec<RungRow>,
    pub ti: Vec<TiRow>,
    /// `(relative path, contents)` of checkpoints and datasets.
    pub artifacts: Vec<(String, String)>,
    pub diagnostics: Vec<String>,
    /// `(cell, seconds)`; kept apart from the results so those stay
    /// reproducible.
    pub timings: Vec<(String, f64)>,
}

impl RunOutput {
    /// Some cell failed, fell back to plain Monte Carlo or produced a
    /// non-finite value, or some evidence estimate is partial. Flags that
    /// only record extra regularisation do not count.
    pub fn degraded(&self) -> bool {
        self.results.iter().any(ResultRow::degraded) || self.ti.iter().any(|r| r.partial)
    }
}

/// Runs the experiment named by `config.kind` on `threads` workers
/// (0 picks one per core).
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| match config.kind {
        ExperimentKind::Synthetic => run_synthetic(config),
        ExperimentKind::Ablation => run_ablation(config),
        ExperimentKind::GoodwinTi => run_goodwin_ti(config),
        ExperimentKind::ConjugateCheck => run_conjugate_check(config),
    })
}

/// Hash of the expanded config, stamped into checkpoints.
pub fn config_hash(config: &ExperimentConfig) -> u64 {
    config.to_toml().as_bytes().chunks(8).fold(0, |h, chunk| {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        splitmix64(h ^ u64::from_le_bytes(word))
    })
}

/// `sin(π/D Σθᵢ)`.
pub fn synthetic_integrand(theta: &[f64]) -> f64 {
    (PI / theta.len() as f64 * theta.iter().sum::<f64>()).sin()
}

/// `10 sin(π/D Σθᵢ) + μ₀`.
pub fn ablation_integrand(theta: &[f64], mu0: f64) -> f64 {
    10.0 * synthetic_integrand(theta) + mu0
}

/// Train and test batches from the two-component mixture.
pub fn mixture_batches(
    dim: usize,
    n_train: usize,
    n_test: usize,
    data_seed: u64,
    f: impl Fn(&[f64]) -> f64,
) -> Result<(SampleBatch, SampleBatch), HarnessError> {
    let mixture = GaussianMixture::symmetric(dim);
    let mut train = sample_mixture_iid(&mixture, n_train, derive_seed(data_seed, &[0]))?;
    let mut test = sample_mixture_iid(&mixture, n_test, derive_seed(data_seed, &[1]))?;
    train.fill_f(&f);
    test.fill_f(&f);
    Ok((train, test))
}

/// Identity of one row before it is evaluated.
struct RowKey {
    experiment: &'static str,
    setting: String,
    method: String,
    dim: usize,
    mu0: Option<f64>,
    t: Option<f64>,
    replication: usize,
    seed: u64,
}

struct Cell {
    row: ResultRow,
    estimate: Option<RungEstimate>,
    checkpoint: Option<(String, String)>,
    notes: Vec<String>,
    seconds: f64,
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' }).collect()
}

fn label(key: &RowKey) -> String {
    format!("{} {} {} r{}", key.experiment, key.setting, key.method, key.replication)
}

/// Turns an estimate (or its failure) into a row plus side outputs.
fn finish_cell(
    key: RowKey,
    outcome: Result<(RungEstimate, Option<CvModel>), HarnessError>,
    hash: Option<u64>,
    started: Instant,
) -> Cell {
    let mut notes = Vec::new();
    let mut row = ResultRow {
        experiment: key.experiment.to_string(),
        setting: key.setting.clone(),
        method: key.method.clone(),
        dim: key.dim,
        n_train: 0,
        n_test: 0,
        mu0: key.mu0,
        t: key.t,
        replication: key.replication,
        seed: key.seed,
        ratio_train: f64::NAN,
        ratio_test: f64::NAN,
        corrected_mean: f64::NAN,
        raw_mean: f64::NAN,
        corrected_se: f64::NAN,
        raw_se: f64::NAN,
        flags: String::new(),
    };
    let mut estimate = None;
    let mut checkpoint = None;
    match outcome {
        Err(e) => {
            row.flags = "failed".into();
            notes.push(format!("{}: failed: {e}", label(&key)));
        }
        Ok((est, model)) => {
            let mut flags: Vec<&str> = io::flag_names(&est.flags);
            if let Some(reason) = &est.fallback {
                flags.push("fallback");
                notes.push(format!("{}: fit failed, plain estimate used: {reason}", label(&key)));
            }
            let ratios = [est.ratio_train, est.ratio_test, est.corrected_mean];
            if ratios.iter().any(|x| !x.is_finite()) {
                flags.push("non-finite");
            }
            row.n_train = est.n_train;
            row.n_test = est.n_test;
            row.ratio_train = est.ratio_train;
            row.ratio_test = est.ratio_test;
            row.corrected_mean = est.corrected_mean;
            row.raw_mean = est.raw_mean;
            row.corrected_se = est.corrected_se();
            row.raw_se = (est.raw_var / est.n_test as f64).sqrt();
            row.flags = flags.join(";");
            if let (Some(model), Some(hash)) = (model, hash) {
                let path = format!(
                    "checkpoints/{}/{}/{}-r{}.ckpt",
                    key.experiment,
                    slug(&key.setting),
                    slug(&key.method),
                    key.replication
                );
                checkpoint = Some((path, io::checkpoint_to_string(&model, hash)));
            }
            estimate = Some(est);
        }
    }
    Cell {
        row,
        estimate,
        checkpoint,
        notes,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn collect(cells: Vec<Cell>, out: &mut RunOutput) -> Vec<Option<RungEstimate>> {
    let mut estimates = Vec::with_capacity(cells.len());
    for cell in cells {
        out.timings.push((
            format!("{} {} {} r{}", cell.row.experiment, cell.row.setting, cell.row.method, cell.row.replication),
            cell.seconds,
        ));
        out.diagnostics.extend(cell.notes);
        out.artifacts.extend(cell.checkpoint);
        out.results.push(cell.row);
        estimates.push(cell.estimate);
    }
    estimates
}

fn checkpoint_hash(config: &ExperimentConfig) -> Option<u64> {
    config.checkpoints.then(|| config_hash(config))
}

/// Fits every method on mixture samples of `sin(π/D Σθᵢ)` across the
/// sample-size and dimension sweeps, scoring on a fresh test batch.
pub fn run_synthetic(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let s = &config.synthetic;
    let tag = ExperimentKind::Synthetic.seed_tag();
    let hash = checkpoint_hash(config);
    let mut cells = Vec::new();
    let variants = config.variants(&s.methods);
    for (d, n) in s.settings() {
        for rep in 0..config.replications {
            for v in &variants {
                cells.push((d, n, rep, v));
            }
        }
    }
    let evaluated: Vec<Cell> = cells
        .par_iter()
        .map(|&(d, n, rep, v)| {
            let started = Instant::now();
            let data_seed = derive_seed(config.master_seed, &[tag, d as u64, n as u64, rep as u64]);
            let key = RowKey {
                experiment: "synthetic",
                setting: format!("D={d},n={n}"),
                method: v.label(),
                dim: d,
                mu0: None,
                t: None,
                replication: rep,
                seed: data_seed,
            };
            let method = config.variant_method(v, derive_seed(data_seed, &v.seed_path()));
            let outcome = mixture_batches(d, n, s.n_test, data_seed, synthetic_integrand).and_then(|(train, test)| {
                Ok(rung_expectation_holdout(&train, &test, f64::NAN, &method)?)
            });
            finish_cell(key, outcome, hash, started)
        })
        .collect();
    let mut out = RunOutput::default();
    collect(evaluated, &mut out);
    Ok(out)
}

/// The training config of one ablation scheme: `λ` is zeroed for the
/// unregularised schemes, `μ` is frozen at zero for the uncentred ones
/// and starts at zero otherwise.
pub fn scheme_method(config: &ExperimentConfig, scheme: Scheme, seed: u64) -> Method {
    let mut train = config.cncv.train_config(seed);
    train.lambda = if scheme.regularized() { config.ablation.lambda } else { 0.0 };
    train.centered = scheme.centered();
    train.mu_init = MuInit::Zero;
    Method::Neural(train)
}

/// Trains the four regularisation/centering schemes on
/// `10 sin(π/D Σθᵢ) + μ₀` for each `μ₀`.
pub fn run_ablation(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let a = &config.ablation;
    let tag = ExperimentKind::Ablation.seed_tag();
    let hash = checkpoint_hash(config);
    let mut cells = Vec::new();
    for &mu0 in &a.mu0 {
        for rep in 0..config.replications {
            for &scheme in &a.schemes {
                cells.push((mu0, rep, scheme));
            }
        }
    }
    let evaluated: Vec<Cell> = cells
        .par_iter()
        .map(|&(mu0, rep, scheme)| {
            let started = Instant::now();
            let data_seed = derive_seed(config.master_seed, &[tag, a.dim as u64, a.n_train as u64, rep as u64]);
            let key = RowKey {
                experiment: "ablation",
                setting: format!("mu0={mu0}"),
                method: scheme.name().into(),
                dim: a.dim,
                mu0: Some(mu0),
                t: None,
                replication: rep,
                seed: data_seed,
            };
            let method = scheme_method(config, scheme, derive_seed(data_seed, &[2, scheme as u64]));
            let outcome = mixture_batches(a.dim, a.n_train, a.n_test, data_seed, |th| ablation_integrand(th, mu0))
                .and_then(|(train, test)| Ok(rung_expectation_holdout(&train, &test, f64::NAN, &method)?));
            finish_cell(key, outcome, hash, started)
        })
        .collect();
    let mut out = RunOutput::default();
    collect(evaluated, &mut out);
    Ok(out)
}

pub fn dataset_file_name(g: usize) -> String {
    format!("goodwin-g{g}.txt")
}

/// Goodwin datasets for every configured `g`: read from `data_dir` when
/// set, otherwise simulated from the generating parameters.
pub fn goodwin_datasets(config: &ExperimentConfig) -> Result<Vec<GoodwinData>, HarnessError> {
    let gw = &config.goodwin;
    let tag = ExperimentKind::GoodwinTi.seed_tag();
    gw.states
        .iter()
        .map(|&g| match &gw.data_dir {
            Some(dir) => {
                let path = Path::new(dir).join(dataset_file_name(g));
                let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                let data = io::dataset_from_str(&text)?;
                if data.n_states() != g {
                    return Err(HarnessError::Format(format!(
                        "{} holds {} states, expected {g}",
                        path.display(),
                        data.n_states()
                    )));
                }
                Ok(data)
            }
            None => {
                let mut params = GoodwinParams::reference(g);
                params.rho = gw.rho;
                let seed = derive_seed(config.master_seed, &[tag, g as u64]);
                Ok(GoodwinData::generate(&params, gw.sigma, seed)?)
            }
        })
        .collect()
}

fn tempering_config(config: &ExperimentConfig, n: usize, seed: u64) -> ChainConfig {
    let gw = &config.goodwin;
    ChainConfig {
        n_iterations: gw.burn_in + n * gw.thin,
        burn_in: gw.burn_in,
        n_samples: n,
        proposal_scale: gw.proposal_scale,
        temperature_rungs: gw.ladder.clone(),
        swap_interval: gw.swap_interval,
        seed,
        adapt_burn_in: true,
        ..ChainConfig::default()
    }
}

fn tempering_notes(name: &str, run: &TemperingOutput) -> Vec<String> {
    let mut notes = Vec::new();
    for (k, d) in run.diagnostics.iter().enumerate() {
        let swap = if k + 1 < run.rungs.len() {
            format!(" swap {:.3}", run.swap_acceptance(k))
        } else {
            String::new()
        };
        let stuck = if d.stuck_warning() { " STUCK" } else { "" };
        notes.push(format!(
            "{name} t={} acceptance {:.3} scale {:.4e}{swap}{stuck}",
            run.rungs[k],
            d.acceptance_rate(),
            d.proposal_scale
        ));
    }
    notes
}

fn ti_rows(
    experiment: &str,
    setting: &str,
    seed: u64,
    method: &str,
    estimates: Vec<RungEstimate>,
    failed: Vec<usize>,
    reference: Option<f64>,
) -> TiRow {
    let n_rungs = estimates.len() + failed.len();
    let ti = integrate_rungs(estimates, failed);
    TiRow {
        experiment: experiment.into(),
        setting: setting.into(),
        method: method.into(),
        n_rungs,
        rule: ti.rule.name().into(),
        log_evidence: ti.log_evidence,
        reference,
        relative_error: reference.map(|r| ((ti.log_evidence - r) / r).abs()),
        partial: ti.partial,
        failed_rungs: ti.failed_rungs.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
        seed,
    }
}

fn rung_row(row: &ResultRow, est: &RungEstimate) -> RungRow {
    RungRow {
        experiment: row.experiment.clone(),
        setting: row.setting.clone(),
        t: est.t,
        method: row.method.clone(),
        raw_mean: est.raw_mean,
        corrected_mean: est.corrected_mean,
        raw_var: est.raw_var,
        corrected_var: est.corrected_var,
        ratio: est.ratio_test,
        seed: row.seed,
    }
}

/// Groups per-rung estimates by `(setting, replication, method)` in first
/// appearance order and integrates each group.
fn integrate_groups(
    out: &mut RunOutput,
    experiment: &str,
    estimates: Vec<Option<RungEstimate>>,
    reference: impl Fn(&ResultRow) -> Option<f64>,
    group_seed: impl Fn(&ResultRow) -> u64,
) {
    let mut groups: BTreeMap<(usize, String), (usize, Vec<RungEstimate>, Vec<usize>)> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, (row, est)) in out.results.iter().zip(estimates).enumerate() {
        let setting = row.setting.rsplit_once(",t=").map_or(row.setting.as_str(), |(s, _)| s);
        let key = (row.replication, format!("{setting}\u{0}{}", row.method));
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push((key.clone(), i));
            (0, Vec::new(), Vec::new())
        });
        match est {
            Some(e) if e.corrected_mean.is_finite() => {
                out.rungs.push(rung_row(row, &e));
                entry.1.push(e);
            }
            _ => entry.2.push(entry.0),
        }
        entry.0 += 1;
    }
    for (key, first) in order {
        let (_, estimates, failed) = groups.remove(&key).expect("group recorded");
        let row = &out.results[first];
        let setting = key.1.split('\u{0}').next().unwrap_or_default().to_string();
        let ti = ti_rows(
            experiment,
            &format!("{setting},rep={}", row.replication),
            group_seed(row),
            &row.method,
            estimates,
            failed,
            reference(row),
        );
        out.ti.push(ti);
    }
}

/// Parallel tempering on the Goodwin posterior for each `g`, two
/// independent runs per replication: control variates are fitted on the
/// first and scored on the second at every rung, and each method's
/// per-rung means are integrated into a log-evidence estimate.
pub fn run_goodwin_ti(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let gw = &config.goodwin;
    let tag = ExperimentKind::GoodwinTi.seed_tag();
    let hash = checkpoint_hash(config);
    let datasets = goodwin_datasets(config)?;
    let mut out = RunOutput::default();
    if gw.data_dir.is_none() {
        for data in &datasets {
            out.artifacts
                .push((format!("data/{}", dataset_file_name(data.n_states())), io::dataset_to_string(data)));
        }
    }
    let models: Vec<GoodwinModel> = datasets
        .into_iter()
        .map(|data| {
            let mut model = GoodwinModel::new(data);
            model.rho = gw.rho;
            model.step = gw.step;
            model
        })
        .collect();

    let mut runs_wanted = Vec::new();
    for (gi, &g) in gw.states.iter().enumerate() {
        for rep in 0..config.replications {
            for replica in 0..2u64 {
                runs_wanted.push((gi, g, rep, replica));
            }
        }
    }
    let runs: Vec<(Result<TemperingOutput, HarnessError>, f64)> = runs_wanted
        .par_iter()
        .map(|&(gi, g, rep, replica)| {
            let started = Instant::now();
            let n = if replica == 0 { gw.n_train } else { gw.n_test };
            let seed = derive_seed(config.master_seed, &[tag, g as u64, rep as u64, replica]);
            let mut init = GoodwinParams::reference(g);
            init.rho = gw.rho;
            let run = parallel_tempering(
                &models[gi],
                &GammaPrior::standard(g + 2),
                &tempering_config(config, n, seed),
                &init.to_vector(),
            )
            .map_err(HarnessError::from);
            (run, started.elapsed().as_secs_f64())
        })
        .collect();
    let mut tempering = BTreeMap::new();
    for (&(_, g, rep, replica), (run, seconds)) in runs_wanted.iter().zip(runs) {
        let name = format!("tempering g={g} rep={rep} {}", if replica == 0 { "train" } else { "test" });
        out.timings.push((name.clone(), seconds));
        match run {
            Ok(run) => {
                out.diagnostics.extend(tempering_notes(&name, &run));
                tempering.insert((g, rep, replica), run);
            }
            Err(e) => out.diagnostics.push(format!("{name}: failed: {e}")),
        }
    }

    let variants = config.variants(&gw.methods);
    let mut cells = Vec::new();
    for &g in &gw.states {
        for rep in 0..config.replications {
            for (k, &t) in gw.ladder.iter().enumerate() {
                for v in &variants {
                    cells.push((g, rep, k, t, v));
                }
            }
        }
    }
    let evaluated: Vec<Cell> = cells
        .par_iter()
        .map(|&(g, rep, k, t, v)| {
            let started = Instant::now();
            let mut path = vec![tag, g as u64, rep as u64, 2, k as u64];
            path.extend(&v.seed_path()[1..]);
            let seed = derive_seed(config.master_seed, &path);
            let key = RowKey {
                experiment: "goodwin-ti",
                setting: format!("g={g},t={t}"),
                method: v.label(),
                dim: g + 2,
                mu0: None,
                t: Some(t),
                replication: rep,
                seed,
            };
            let outcome = match (tempering.get(&(g, rep, 0)), tempering.get(&(g, rep, 1))) {
                (Some(train), Some(test)) => rung_expectation_holdout(
                    &train.batches[k],
                    &test.batches[k],
                    t,
                    &config.variant_method(v, seed),
                )
                .map_err(HarnessError::from),
                _ => Err(HarnessError::Pool("tempering run unavailable".into())),
            };
            finish_cell(key, outcome, hash, started)
        })
        .collect();
    let estimates = collect(evaluated, &mut out);
    let master = config.master_seed;
    integrate_groups(&mut out, "goodwin-ti", estimates, |_| None, |row| {
        derive_seed(master, &[tag, (row.dim - 2) as u64, row.replication as u64])
    });
    Ok(out)
}

/// The conjugate Gaussian location model of a conjugate-check run.
pub fn conjugate_model(config: &ExperimentConfig) -> Result<ConjugateGaussian, HarnessError> {
    let c = &config.conjugate;
    let tag = ExperimentKind::ConjugateCheck.seed_tag();
    Ok(ConjugateGaussian::simulate(
        &c.location,
        c.observations,
        c.sigma,
        vec![0.0; c.location.len()],
        c.prior_sd,
        derive_seed(config.master_seed, &[tag]),
    )?)
}

/// Thermodynamic integration with exact power-posterior samples on a
/// power-law ladder, compared with the closed-form log evidence.
pub fn run_conjugate_check(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let c = &config.conjugate;
    let tag = ExperimentKind::ConjugateCheck.seed_tag();
    let hash = checkpoint_hash(config);
    let model = conjugate_model(config)?;
    let exact = model.log_evidence();
    let variants = config.variants(&c.methods);
    let mut cells = Vec::new();
    for &n_rungs in &c.rung_counts {
        let ladder = power_law_ladder(n_rungs, c.ladder_exponent)?;
        for rep in 0..config.replications {
            for (k, &t) in ladder.iter().enumerate() {
                for v in &variants {
                    cells.push((n_rungs, rep, k, t, v));
                }
            }
        }
    }
    let evaluated: Vec<Cell> = cells
        .par_iter()
        .map(|&(n_rungs, rep, k, t, v)| {
            let started = Instant::now();
            let batch_seed = derive_seed(config.master_seed, &[tag, n_rungs as u64, rep as u64, k as u64]);
            let key = RowKey {
                experiment: "conjugate-check",
                setting: format!("rungs={n_rungs},t={t}"),
                method: v.label(),
                dim: c.location.len(),
                mu0: None,
                t: Some(t),
                replication: rep,
                seed: batch_seed,
            };
            let method = config.variant_method(v, derive_seed(batch_seed, &v.seed_path()));
            let outcome = model
                .sample_rung(t, c.samples_per_rung, batch_seed)
                .and_then(|batch| rung_expectation(&batch, t, &method, config.train_fraction))
                .map_err(HarnessError::from);
            finish_cell(key, outcome, hash, started)
        })
        .collect();
    let mut out = RunOutput::default();
    let estimates = collect(evaluated, &mut out);
    let master = config.master_seed;
    integrate_groups(&mut out, "conjugate-check", estimates, |_| Some(exact), |row| {
        derive_seed(master, &[tag, row.replication as u64])
    });
    Ok(out)
}

/// Writes `results.csv`, `config.echo`, `diagnostics.log`, `timings.csv`,
/// the evidence tables of TI experiments and every artifact under `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, out: &RunOutput) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    io::write_file(
        &dir.join("results.csv"),
        &io::table_to_string(io::RESULTS_VERSION, &out.results, io::RESULTS_COLUMNS),
    )?;
    io::write_file(&dir.join("config.echo"), &config.to_toml())?;
    if matches!(config.kind, ExperimentKind::GoodwinTi | ExperimentKind::ConjugateCheck) {
        io::write_file(
            &dir.join("rungs.csv"),
            &io::table_to_string(io::RUNGS_VERSION, &out.rungs, io::RUNGS_COLUMNS),
        )?;
        io::write_file(&dir.join("ti.csv"), &io::table_to_string(io::TI_VERSION, &out.ti, io::TI_COLUMNS))?;
    }
    let mut log = out.diagnostics.join("\n");
    log.push('\n');
    io::write_file(&dir.join("diagnostics.log"), &log)?;
    let mut timings = String::from("cell,seconds\n");
    for (cell, seconds) in &out.timings {
        timings.push_str(&format!("\"{cell}\",{seconds:.3}\n"));
    }
    io::write_file(&dir.join("timings.csv"), &timings)?;
    for (path, contents) in &out.artifacts {
        io::write_file(&dir.join(path), contents)?;
    }
    Ok(())
}

/// Writes the Goodwin datasets a `goodwin-ti` run would simulate.
pub fn regenerate_data(config: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, HarnessError> {
    let mut written = Vec::new();
    for data in goodwin_datasets(config)? {
        let name = dataset_file_name(data.n_states());
        io::write_file(&dir.join(&name), &io::dataset_to_string(&data))?;
        written.push(name);
    }
    Ok(written)
}
