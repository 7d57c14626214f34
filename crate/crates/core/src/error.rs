use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite weight at coordinate {index}")]
    NonFiniteWeight { index: usize },

    #[error("sample count must be at least 1")]
    ZeroSamples,

    #[error("empty input")]
    EmptyInput,

    #[error("updates from ONU {expected} and ONU {found} mixed in one ONU aggregate")]
    MixedOnu { expected: u32, found: u32 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty selection")]
    EmptySelection,

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("requested {requested} clients but only {available} exist")]
    TooManyRequested { requested: usize, available: usize },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration rather than by
    /// the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. } | Error::TooManyRequested { .. } | Error::Parse { .. }
        )
    }
}
