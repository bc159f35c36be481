//! Crate-wide error type.

use thiserror::Error;

/// Errors produced across the crate. Variants map onto the CLI exit-code
/// contract: input/parse problems exit 2, degenerate numerics exit 3,
/// `NoNullSpace` exits 4, training divergence exits 5.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: String, got: String },

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("numerical failure: {message} (residual {residual:e})")]
    NumericalFailure { message: String, residual: f64 },

    #[error("degenerate spectrum: matrix is numerically zero at the rank tolerance")]
    DegenerateSpectrum,

    #[error("no null space: the classifier head is full rank")]
    NoNullSpace,

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeError {
            expected: expected.into(),
            got: got.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
