use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation, integration and reporting pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sign pattern `{pattern}` has no assigned piece or boundary value")]
    UnassignedPattern { pattern: String },

    #[error("convex set has no vertices")]
    EmptySet,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("iterate diverged at step {step}: |x| = {norm:e} exceeds bound {bound:e}")]
    DivergedIterate { step: usize, norm: f64, bound: f64 },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("time {t} outside of domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("window of length {horizon} starting at index {start} exceeds the trace")]
    WindowExceedsTrace { start: usize, horizon: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("event bracketing failed at t = {t}")]
    StepTooLarge { t: f64 },

    #[error("trace is empty")]
    EmptyTrace,

    #[error("invalid config at `{path}`: {message}")]
    ConfigInvalid { path: String, message: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
