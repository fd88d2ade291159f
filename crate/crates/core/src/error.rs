use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NcError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A solver gave up (iteration cap, singular system, NaN).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The operation is well defined but does not apply to this input,
    /// e.g. a certificate requested for a degenerate solution.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("i/o error: {0}")]
    Io(String),

    /// Malformed CSV or weight file.
    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for NcError {
    fn from(e: std::io::Error) -> Self {
        NcError::Io(e.to_string())
    }
}

impl From<csv::Error> for NcError {
    fn from(e: csv::Error) -> Self {
        NcError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NcError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(NcError::InvalidInput(msg.into()))
}

pub(crate) fn mismatch<T>(msg: impl Into<String>) -> Result<T> {
    Err(NcError::DimensionMismatch(msg.into()))
}
