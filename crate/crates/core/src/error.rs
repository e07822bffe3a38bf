use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-sized dimension in shape {channels}x{height}x{width}")]
    EmptyDimension {
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("client {0} is not registered with the amplitude bank")]
    UnregisteredClient(u16),
    #[error("no amplitude bank entries from a client other than {0}")]
    NoForeignEntries(u16),
    #[error("parameter dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("aggregation weights must be non-negative and sum to 1 (sum = {0})")]
    InvalidWeights(f64),
    #[error("client {client} failed in round {round}")]
    ClientFailed {
        round: usize,
        client: u16,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed {format} data: {reason}")]
    Malformed { format: &'static str, reason: String },
    #[error("image `{0}` has no matching mask")]
    MissingMask(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
