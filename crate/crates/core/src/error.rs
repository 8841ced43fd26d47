use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix of dimension {dim} is not positive definite after jitter repair")]
    NotPositiveDefinite { dim: usize },

    #[error("non-finite state after integration: {0:?}")]
    NonFiniteState(Vec<f64>),

    #[error("equilibrium solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("non-positive variance {value:e} on measurement channel {channel}")]
    DegenerateVariance { channel: usize, value: f64 },

    #[error("bad-data event at {start_time} s starts beyond the series end ({len} samples at {step} s)")]
    ScheduleOutOfRange { start_time: f64, len: usize, step: f64 },

    #[error("measurements equal truth everywhere; epsilon1 is undefined")]
    DegenerateDenominator,

    #[error("truth sample {index} is zero; relative error is undefined")]
    ZeroTruthSample { index: usize },

    #[error("series length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("missing column `{0}`")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown {kind} reference `{name}`")]
    UnknownReference { kind: &'static str, name: String },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short category label used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::NonFiniteState(_)
            | Error::DegenerateVariance { .. } => "filter",
            Error::Step { source, .. } | Error::Seed { source, .. } => source.category(),
            Error::NoConvergence { .. } => "model",
            Error::ScheduleOutOfRange { .. } => "noise",
            Error::DegenerateDenominator
            | Error::ZeroTruthSample { .. }
            | Error::LengthMismatch(_) => "metrics",
            Error::InvalidParameter(_) => "parameter",
            Error::Parse { .. } | Error::Schema(_) => "data",
            Error::Config(_) | Error::UnknownReference { .. } | Error::Json(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
