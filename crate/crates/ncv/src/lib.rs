//! Experiment harness for the `ncv-core` control variates.
//!
//! [`config`] parses experiment files, [`runs`] executes them and
//! [`io`] owns every on-disk format. The `ncv` binary wires these to a CLI.

use std::path::{Path, PathBuf};

pub mod config;
pub mod io;
pub mod runs;

pub use config::{ExperimentConfig, ExperimentKind, MethodName, Scheme};
pub use runs::{run_experiment, write_outputs, RunOutput};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Core(#[from] ncv_core::Error),

    #[error("worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
