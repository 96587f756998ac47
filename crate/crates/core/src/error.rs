use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dimension {dim} exceeds the configured maximum {max}")]
    Size { dim: usize, max: usize },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("matrix is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("eigendecomposition failed to converge")]
    NoConvergence,
}

pub type Result<T> = std::result::Result<T, Error>;
