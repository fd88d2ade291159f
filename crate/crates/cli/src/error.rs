use nclab_core::NcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<NcError> for CliError {
    fn from(e: NcError) -> Self {
        match e {
            NcError::Numerical(_) | NcError::NotApplicable(_) => CliError::Numerical(e.to_string()),
            NcError::Io(m) => CliError::Io(std::io::Error::other(m)),
            NcError::InvalidInput(_) | NcError::DimensionMismatch(_) | NcError::Format(_) => CliError::Config(e.to_string()),
        }
    }
}
