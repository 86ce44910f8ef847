use alloc::string::String;

/// Errors raised by the control-variate library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point lies outside the support of the target")]
    OutOfSupport,

    #[error("batch of {n} samples is too small, need more than {required}")]
    UndersizedBatch { n: usize, required: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ODE integration produced a non-finite state after s = {last_good_time}")]
    BlowUp { last_good_time: f64 },

    #[error("training aborted at epoch {epoch}: {reason}")]
    TrainingAborted { epoch: usize, reason: String },

    #[error("linear system is singular even after regularisation")]
    Singular,

    #[error("control variate is not finite at sample {sample} (largest |weight| {max_abs_weight})")]
    NonFiniteControlVariate { sample: usize, max_abs_weight: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
