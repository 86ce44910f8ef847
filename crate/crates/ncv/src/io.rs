//! File formats: result tables, model checkpoints and Goodwin datasets.
//!
//! Tables are CSV preceded by one `#` line naming the format version and
//! columns. Floats are written in shortest round-trip form, so a rerun
//! with the same inputs produces identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ncv_core::goodwin::{GoodwinData, GoodwinParams};
use ncv_core::neural::{Activation, Mlp};
use ncv_core::stein::{CvModel, CvPayload, FitFlags, KernelCv};

use crate::HarnessError;

pub const RESULTS_VERSION: &str = "ncv-results v1";
pub const RUNGS_VERSION: &str = "ncv-rungs v1";
pub const TI_VERSION: &str = "ncv-ti v1";
pub const CHECKPOINT_VERSION: &str = "ncv-checkpoint v1";
pub const DATASET_VERSION: &str = "goodwin-data v1";

pub const RESULTS_COLUMNS: &str = "experiment,setting,method,dim,n_train,n_test,mu0,t,replication,seed,\
ratio_train,ratio_test,corrected_mean,raw_mean,corrected_se,raw_se,flags";
pub const RUNGS_COLUMNS: &str = "experiment,setting,t,method,raw_mean,corrected_mean,raw_var,corrected_var,ratio,seed";
pub const TI_COLUMNS: &str =
    "experiment,setting,method,n_rungs,rule,log_evidence,reference,relative_error,partial,failed_rungs,seed";

/// One `(method, setting, replication)` outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub setting: String,
    pub method: String,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub mu0: Option<f64>,
    pub t: Option<f64>,
    pub replication: usize,
    pub seed: u64,
    pub ratio_train: f64,
    pub ratio_test: f64,
    pub corrected_mean: f64,
    pub raw_mean: f64,
    pub corrected_se: f64,
    pub raw_se: f64,
    /// `;`-separated condition names; empty when the fit was clean.
    pub flags: String,
}

impl ResultRow {
    /// Flags that mean the row is not a clean estimate.
    pub const DEGRADED_FLAGS: [&'static str; 3] = ["failed", "fallback", "non-finite"];

    pub fn flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn degraded(&self) -> bool {
        self.flags.split(';').any(|f| Self::DEGRADED_FLAGS.contains(&f))
    }
}

/// Per-temperature summary of a TI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungRow {
    pub experiment: String,
    pub setting: String,
    pub t: f64,
    pub method: String,
    pub raw_mean: f64,
    pub corrected_mean: f64,
    pub raw_var: f64,
    pub corrected_var: f64,
    pub ratio: f64,
    pub seed: u64,
}

/// One log-evidence estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiRow {
    pub experiment: String,
    pub setting: String,
    pub method: String,
    pub n_rungs: usize,
    pub rule: String,
    pub log_evidence: f64,
    /// Closed-form value, where one exists.
    pub reference: Option<f64>,
    pub relative_error: Option<f64>,
    pub partial: bool,
    pub failed_rungs: String,
    pub seed: u64,
}

fn header_line<T: Serialize>(version: &str, sample: &T) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(sample).expect("in-memory write");
    let text = String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf8");
    format!("# {version}: {}\n", text.lines().next().unwrap_or_default())
}

/// CSV text with a version comment; the comment repeats the column names
/// so an empty table still documents its layout.
pub fn table_to_string<T: Serialize>(version: &str, rows: &[T], empty_header: &str) -> String {
    let mut out = match rows.first() {
        Some(first) => header_line(version, first),
        None => format!("# {version}: {empty_header}\n"),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf8"));
    out
}

pub fn read_table<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

pub fn flag_names(flags: &FitFlags) -> Vec<&'static str> {
    let mut out = Vec::new();
    if flags.ridge_jitter {
        out.push("ridge-jitter");
    }
    if flags.zero_variance {
        out.push("zero-variance");
    }
    if flags.regularization_raised {
        out.push("regularization-raised");
    }
    if flags.regularization_exhausted {
        out.push("regularization-exhausted");
    }
    out
}

fn floats(xs: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x:e}").expect("string write");
    }
    s
}

fn usizes(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// A fitted control variate and the hash of the config that produced it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: CvModel,
    pub config_hash: u64,
}

/// Text serialisation of a fitted control variate, one `key values` line
/// per field; network weights are row-major per layer, biases last.
pub fn checkpoint_to_string(model: &CvModel, config_hash: u64) -> String {
    let mut s = format!(
        "{CHECKPOINT_VERSION}\nconfig_hash {config_hash:016x}\nkind {}\nmu {:e}\n",
        model.kind().name(),
        model.mu
    );
    let f = &model.flags;
    writeln!(
        s,
        "flags {} {} {} {}",
        f.ridge_jitter as u8, f.zero_variance as u8, f.regularization_raised as u8, f.regularization_exhausted as u8
    )
    .expect("string write");
    match &model.payload {
        CvPayload::Linear { coefficients } | CvPayload::Quadratic { coefficients } => {
            writeln!(s, "coefficients {}", floats(coefficients)).expect("string write");
        }
        CvPayload::ControlFunctional(k) => {
            writeln!(s, "dim {}", k.dim()).expect("string write");
            writeln!(s, "bandwidth {:e}", k.bandwidth()).expect("string write");
            writeln!(s, "ridge {:e}", k.ridge()).expect("string write");
            writeln!(s, "anchors {}", floats(k.anchors())).expect("string write");
            writeln!(s, "anchor_scores {}", floats(k.anchor_scores())).expect("string write");
            writeln!(s, "alpha {}", floats(k.alpha())).expect("string write");
        }
        CvPayload::Neural(net) => {
            writeln!(s, "widths {}", usizes(net.widths())).expect("string write");
            writeln!(s, "activation {}", net.activation().name()).expect("string write");
            writeln!(s, "in_shift {}", floats(net.in_shift())).expect("string write");
            writeln!(s, "in_scale {}", floats(net.in_scale())).expect("string write");
            writeln!(s, "out_scale {}", floats(net.out_scale())).expect("string write");
            writeln!(s, "params {}", floats(net.params())).expect("string write");
        }
    }
    s
}

struct Fields<'a> {
    lines: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Result<&'a str, HarnessError> {
        self.lines
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| HarnessError::Format(format!("checkpoint lacks `{key}`")))
    }

    fn floats(&self, key: &str) -> Result<Vec<f64>, HarnessError> {
        self.get(key)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| HarnessError::Format(format!("bad number `{t}` in `{key}`"))))
            .collect()
    }

    fn float(&self, key: &str) -> Result<f64, HarnessError> {
        let v = self.floats(key)?;
        match v.as_slice() {
            [x] => Ok(*x),
            _ => Err(HarnessError::Format(format!("`{key}` must hold one number"))),
        }
    }

    fn usizes(&self, key: &str) -> Result<Vec<usize>, HarnessError> {
        self.get(key)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| HarnessError::Format(format!("bad integer `{t}` in `{key}`"))))
            .collect()
    }
}

pub fn checkpoint_from_str(text: &str) -> Result<Checkpoint, HarnessError> {
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_VERSION) {
        return Err(HarnessError::Format("not a checkpoint, or an unsupported version".into()));
    }
    let fields = Fields {
        lines: lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once(' ').unwrap_or((l, "")))
            .collect(),
    };
    let core = |e: ncv_core::Error| HarnessError::Format(e.to_string());
    let flag_bits = fields.usizes("flags")?;
    if flag_bits.len() != 4 {
        return Err(HarnessError::Format("`flags` must hold four bits".into()));
    }
    let flags = FitFlags {
        ridge_jitter: flag_bits[0] == 1,
        zero_variance: flag_bits[1] == 1,
        regularization_raised: flag_bits[2] == 1,
        regularization_exhausted: flag_bits[3] == 1,
    };
    let payload = match fields.get("kind")? {
        "linear" => CvPayload::Linear {
            coefficients: fields.floats("coefficients")?,
        },
        "quadratic" => CvPayload::Quadratic {
            coefficients: fields.floats("coefficients")?,
        },
        "cf" => CvPayload::ControlFunctional(
            KernelCv::from_parts(
                fields.usizes("dim")?.first().copied().unwrap_or(0),
                fields.float("bandwidth")?,
                fields.float("ridge")?,
                fields.floats("anchors")?,
                fields.floats("anchor_scores")?,
                fields.floats("alpha")?,
            )
            .map_err(core)?,
        ),
        "cncv" => {
            let activation = match fields.get("activation")? {
                "sigmoid" => Activation::Sigmoid,
                "tanh" => Activation::Tanh,
                other => return Err(HarnessError::Format(format!("unknown activation `{other}`"))),
            };
            CvPayload::Neural(
                Mlp::from_parts(
                    fields.usizes("widths")?,
                    activation,
                    fields.floats("params")?,
                    fields.floats("in_shift")?,
                    fields.floats("in_scale")?,
                    fields.floats("out_scale")?,
                )
                .map_err(core)?,
            )
        }
        other => return Err(HarnessError::Format(format!("unknown model kind `{other}`"))),
    };
    let config_hash = u64::from_str_radix(fields.get("config_hash")?, 16)
        .map_err(|_| HarnessError::Format("bad `config_hash`".into()))?;
    Ok(Checkpoint {
        model: CvModel {
            payload,
            mu: fields.float("mu")?,
            flags,
        },
        config_hash,
    })
}

/// Plain-text Goodwin dataset: `#` header lines, then `s y_1 … y_g` rows.
pub fn dataset_to_string(data: &GoodwinData) -> String {
    let g = data.n_states();
    let mut s = format!("# {DATASET_VERSION}\n");
    writeln!(s, "# states {g}").expect("string write");
    writeln!(s, "# rho {}", data.generating.rho).expect("string write");
    writeln!(s, "# sigma {:e}", data.sigma).expect("string write");
    writeln!(s, "# seed {}", data.seed).expect("string write");
    writeln!(s, "# params {}", floats(&data.generating.to_vector())).expect("string write");
    for (i, time) in data.times.iter().enumerate() {
        writeln!(s, "{time:e} {}", floats(data.observation(i))).expect("string write");
    }
    s
}

pub fn dataset_from_str(text: &str) -> Result<GoodwinData, HarnessError> {
    let bad = |m: String| HarnessError::Format(m);
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match line.strip_prefix('#') {
            Some(h) => header.push(h.trim()),
            None => rows.push(line),
        }
    }
    if header.first() != Some(&DATASET_VERSION) {
        return Err(bad("not a Goodwin dataset, or an unsupported version".into()));
    }
    let fields = Fields {
        lines: header[1..].iter().map(|l| l.split_once(' ').unwrap_or((l, ""))).collect(),
    };
    let g = fields.usizes("states")?.first().copied().unwrap_or(0);
    let rho = fields.usizes("rho")?.first().copied().unwrap_or(0) as u32;
    let seed = fields
        .get("seed")?
        .parse()
        .map_err(|_| bad("bad seed".into()))?;
    let generating =
        GoodwinParams::from_vector(&fields.floats("params")?, rho).map_err(|e| bad(e.to_string()))?;
    if generating.n_states() != g {
        return Err(bad(format!("params describe {} states, header says {g}", generating.n_states())));
    }
    let mut times = Vec::with_capacity(rows.len());
    let mut observations = Vec::with_capacity(rows.len() * g);
    for row in rows {
        let values: Vec<f64> = row
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad number `{t}`"))))
            .collect::<Result<_, _>>()?;
        if values.len() != g + 1 {
            return Err(bad(format!("expected {} columns, found {}", g + 1, values.len())));
        }
        times.push(values[0]);
        observations.extend_from_slice(&values[1..]);
    }
    Ok(GoodwinData {
        times,
        observations,
        sigma: fields.float("sigma")?,
        generating,
        seed,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ncv_core::samplers::SampleBatch;
    use ncv_core::seed::rng_from_seed;
    use ncv_core::stein::{fit_control_functional, fit_quadratic_cv, CfConfig};
    use ncv_core::targets::IsotropicGaussian;

    fn batch() -> SampleBatch {
        let thetas: Vec<f64> = (0..60).map(|i| ((i * 37 % 23) as f64 / 7.0) - 1.5).collect();
        let mut b = SampleBatch::from_target(&IsotropicGaussian::standard(2), thetas, 0).unwrap();
        b.fill_f(|t| t[0].sin() + t[1] * t[1]);
        b
    }

    fn same_predictions(a: &CvModel, b: &CvModel) {
        let batch = batch();
        assert_eq!(a.evaluate_batch(&batch), b.evaluate_batch(&batch));
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.flags, b.flags);
    }

    #[test]
    fn polynomial_checkpoint_round_trip() {
        let model = fit_quadratic_cv(&batch()).unwrap();
        let text = checkpoint_to_string(&model, 0xabc);
        let back = checkpoint_from_str(&text).unwrap();
        assert_eq!(back.config_hash, 0xabc);
        same_predictions(&model, &back.model);
    }

    #[test]
    fn kernel_checkpoint_round_trip() {
        let model = fit_control_functional(&batch(), &CfConfig::default()).unwrap();
        let back = checkpoint_from_str(&checkpoint_to_string(&model, 7)).unwrap();
        same_predictions(&model, &back.model);
    }

    #[test]
    fn neural_checkpoint_round_trip() {
        let mut net = Mlp::new(2, &[3, 4], Activation::Tanh).unwrap();
        net.init_fan_in(&mut rng_from_seed(1));
        net.set_standardization(vec![0.1, -0.2], vec![1.5, 0.5], vec![2.0, 3.0]).unwrap();
        let model = CvModel {
            payload: CvPayload::Neural(net),
            mu: 1.0 / 3.0,
            flags: FitFlags {
                zero_variance: true,
                ..FitFlags::default()
            },
        };
        let back = checkpoint_from_str(&checkpoint_to_string(&model, 7)).unwrap();
        same_predictions(&model, &back.model);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        assert!(checkpoint_from_str("hello").is_err());
        let text = format!("{CHECKPOINT_VERSION}\nconfig_hash 0\nkind linear\nmu 0e0\nflags 0 0 0 0\ncoefficients 1 x\n");
        assert!(checkpoint_from_str(&text).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let data = GoodwinData::generate(&GoodwinParams::reference(3), 0.1, 5).unwrap();
        let text = dataset_to_string(&data);
        assert_eq!(dataset_from_str(&text).unwrap(), data);
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 40);
    }

    #[test]
    fn table_round_trip() {
        let rows = vec![ResultRow {
            experiment: "ablation".into(),
            setting: "mu0=7".into(),
            method: "cncv".into(),
            dim: 10,
            n_train: 500,
            n_test: 500,
            mu0: Some(7.0),
            t: None,
            replication: 0,
            seed: u64::MAX,
            ratio_train: 0.1,
            ratio_test: f64::INFINITY,
            corrected_mean: 1.0 / 3.0,
            raw_mean: -2.5e-300,
            corrected_se: 0.0,
            raw_se: 1.0,
            flags: "zero-variance".into(),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let text = table_to_string(RESULTS_VERSION, &rows, "");
        assert!(text.starts_with("# ncv-results v1: experiment,setting,method"));
        write_file(&path, &text).unwrap();
        assert_eq!(read_table::<ResultRow>(&path).unwrap(), rows);
    }
}
