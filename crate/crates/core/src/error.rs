//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Coincident or zero-length geometry where a direction is required.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A scene violates one of its structural invariants.
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Matrix or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation that needs data was given none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Training produced a non-finite loss or parameter.
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    /// A file could not be interpreted as the expected format.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
