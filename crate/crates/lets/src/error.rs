//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state component {0} has zero variance")]
    ZeroVariance(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
