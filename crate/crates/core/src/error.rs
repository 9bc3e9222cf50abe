use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid context set: {0}")]
    Context(String),

    #[error("arm index {arm} out of range for {n_arms} arms")]
    InvalidArm { arm: usize, n_arms: usize },

    #[error("invalid arm distribution: {0}")]
    Distribution(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ground-truth parameter is not available for this audit")]
    MissingTruth,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Stream(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::NotSymmetric => "not_symmetric",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::Config(_) => "config",
            Error::Context(_) => "context",
            Error::InvalidArm { .. } => "invalid_arm",
            Error::Distribution(_) => "distribution",
            Error::Parse { .. } => "parse",
            Error::MissingTruth => "missing_truth",
            Error::Io { .. } | Error::Stream(_) => "io",
        }
    }
}
