use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),
    #[error("scale matrix is singular (|det| = {0:e})")]
    SingularScale(f64),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("operation requires a linear model with identity link")]
    ModelNotLinear,
    #[error("optimization diverged: {0}")]
    Diverged(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad format: {0}")]
    BadFormat(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!("{what}: expected length {want}, got {got}")));
    }
    Ok(())
}
