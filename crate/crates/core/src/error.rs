use std::path::PathBuf;

/// Errors produced by the estimation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: u64,
        column: usize,
        message: String,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller violated a documented precondition (asymmetric input, bad weights, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Every candidate of a tuning sweep failed or was excluded.
    #[error("selection failed: {0}")]
    Selection(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
