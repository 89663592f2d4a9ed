use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, missing inputs, or unusable dataset layout.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (shape, range, arity).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimensions of two operands do not agree.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not symmetric (max deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },

    #[error("eigensolver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("least-squares system is rank deficient; pass a ridge > 0")]
    RankDeficient,

    /// A network architecture shrinks its input below one pixel.
    #[error("architecture rejected at layer {layer}: {reason}")]
    Shape { layer: usize, reason: String },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("model container: {0}")]
    Container(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
