use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the calibration engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at index {index}: {reason}")]
    Ingest { index: usize, reason: String },

    #[error("insufficient data: coverage {coverage:.3} below required minimum")]
    InsufficientData { coverage: f64 },

    #[error("empty window")]
    EmptyWindow,

    #[error("empty input")]
    EmptyInput,

    #[error("histograms do not share bin edges")]
    BinMismatch,

    #[error("degenerate variance in {0}")]
    DegenerateVariance(&'static str),

    #[error("out-of-order result at {at}: must be later than {last}")]
    Ordering { at: String, last: String },

    #[error("site {site_id} has no {channel} data")]
    MissingChannel { site_id: String, channel: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scenario: {0}")]
    Spec(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("toml error in {path}: {message}")]
    Toml { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
