use thiserror::Error;

/// Errors raised by the SDC building blocks and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("LU factorization failed: zero pivot in row {row}")]
    FactorizationFailure { row: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("implicit solver failed: {0}")]
    SolverFailure(String),

    #[error("run aborted at t = {t}: {reason}")]
    Aborted { t: f64, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl SdcError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SdcError::InvalidArgument(msg.into())
    }
}

impl From<std::io::Error> for SdcError {
    fn from(e: std::io::Error) -> Self {
        SdcError::Io(e.to_string())
    }
}

pub type Result<T, E = SdcError> = std::result::Result<T, E>;
