//! Error type shared by all pipeline stages.

use std::path::PathBuf;

/// Errors produced by pipeline construction and execution.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// File could not be read or written.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Raster exists but is not a format the pipeline accepts.
    #[error("unsupported image {path}: {detail}")]
    UnsupportedImage { path: PathBuf, detail: String },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// External label or edge data failed validation.
    #[error("ingestion error: {0}")]
    Ingest(String),

    /// Two inputs that must agree in shape do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    /// A statistical model could not be fit from the given data.
    #[error("model error: {0}")]
    Model(String),

    /// The eigensolver failed to reach the requested tolerance.
    #[error("solver failed: {message}; residuals {residuals:?}")]
    Solver {
        message: String,
        residuals: Vec<f64>,
    },

    /// Configuration file or value rejected.
    #[error("config error: {0}")]
    Config(String),

    /// A runtime self-check (operator definiteness, labeling structure)
    /// failed, indicating an internal inconsistency.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
