use thiserror::Error;

/// Errors raised by the diffusion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter fell outside its admissible domain.
    #[error("parameter domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("step {t} outside [1, {steps}]")]
    StepOutOfRange { t: usize, steps: usize },

    /// A computation produced NaN or infinity.
    #[error("numeric failure: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    /// Malformed or unusable input data.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for failures caused by the numbers themselves rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { expected, got });
    }
    Ok(())
}
