use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid bounds in {0}")]
    Bounds(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("iteration limit of {0} reached")]
    IterationLimit(usize),
    #[error("solve result is not optimal")]
    NotOptimal,
    #[error("incomparable variable sets: {0}")]
    Incomparable(String),
}
