use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A dataset file could not be parsed. `row` is the 1-based data row
    /// (the header is row 0).
    #[error("parse error in {path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The matched set is undefined: no treated units, or more treated than
    /// control units for pair matching.
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("zero standard error: the statistic is degenerate")]
    ZeroVariance,

    #[error("exhaustive enumeration needs at most {max} pairs, got {pairs}; use sampled mode")]
    ExhaustiveTooLarge { pairs: usize, max: usize },

    #[error("invalid input: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
