//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's contract.
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A configuration value is out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An index or region falls outside the valid range.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// Dataset, manifest, or split problem.
    #[error("data error: {0}")]
    Data(String),

    /// File bytes violate a binary format (checkpoint, image).
    #[error("format error: {0}")]
    Format(String),

    /// An API contract was violated (non-scalar loss, non-binary mask, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A forward primitive produced NaN or Inf from finite inputs.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    /// Text parse failure (manifest or config file), 1-based line number.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
