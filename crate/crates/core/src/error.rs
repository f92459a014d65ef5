use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("parameter vector belongs to spec {actual:016x}, expected {expected:016x}")]
    SpecMismatch { expected: u64, actual: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("rollout terminated after {collected} of {requested} transitions")]
    RolloutTooShort { collected: usize, requested: usize },
    #[error("stage {requested} not recorded; available stages: {available:?}")]
    MissingStage { requested: String, available: Vec<u64> },
    #[error("sampling circle of radius {radius} leaves the grid")]
    CircleOutsideGrid { radius: f64 },
    #[error("quadratic fit system is singular")]
    SingularFit,
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn dim(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            actual,
        }
    }
}
