//! Error type shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two matrices fed to an operation whose shapes do not line up.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// A vector or axis length that does not match what the context requires.
    #[error("{context}: expected length {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// NaN or infinite entry where only finite values are allowed.
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    /// The Jacobi sweep loop hit its cap before the off-diagonal cosines
    /// dropped below tolerance.
    #[error("svd did not converge within {max_sweeps} sweeps (worst off-diagonal cosine {residual:.3e})")]
    SvdNonConvergence { max_sweeps: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset")]
    EmptyDataset,

    /// A malformed record in a dataset file, keyed by its zero-based index.
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },

    /// A class with no documents in a training split.
    #[error("no training documents for class {class}")]
    MissingClass { class: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A config, model, or dataset file that does not parse.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
