//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AwError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AwError {
    /// Caller supplied something outside the documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("p-value {value} at position {index} is outside (0, 1]")]
    PValueOutOfRange { index: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("quadrature did not converge: last change {delta:e} at {panels} panels")]
    NonConvergence { delta: f64, panels: usize },

    #[error("tilt calibration failed for K={k}, c={target:e}: {reason}")]
    Calibration {
        k: usize,
        target: f64,
        reason: String,
    },

    #[error("library cell K={k}, target {t_index} failed: {reason}")]
    CellFailed {
        k: usize,
        t_index: usize,
        reason: String,
    },

    #[error("library build failed for {} cell(s): {}", .0.len(), .0.join("; "))]
    LibraryBuild(Vec<String>),

    #[error("K={k} is not covered by the library (available {kmin}..={kmax})")]
    KNotInLibrary { k: usize, kmin: usize, kmax: usize },

    #[error("library format error at line {line}: {reason}")]
    Format { line: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl AwError {
    /// True for errors caused by the caller's data or arguments rather than by
    /// a numerical routine failing.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            AwError::InvalidInput(_)
                | AwError::DimensionMismatch { .. }
                | AwError::PValueOutOfRange { .. }
                | AwError::KNotInLibrary { .. }
                | AwError::Format { .. }
                | AwError::Io(_)
        )
    }
}

impl From<std::io::Error> for AwError {
    fn from(e: std::io::Error) -> Self {
        AwError::Io(e.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(AwError::InvalidInput(msg.into()))
}
