use thiserror::Error;

/// Errors raised while validating inputs or fitting a model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Robust scale collapsed to zero, so residuals cannot be standardized.
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    /// The observation pattern cannot support the requested correlation model.
    #[error("correlation structure: {0}")]
    Structural(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("no candidate fit converged: {0}")]
    NoConvergence(String),

    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
