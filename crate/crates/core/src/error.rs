use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("column index {index} out of range for {n_cols} columns")]
    IndexOutOfRange { index: usize, n_cols: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("singular Xi kernel: Q_hat = {q_hat}, Q_hat - Delta_hat = {gap}")]
    SingularKernel { q_hat: f64, gap: f64 },

    #[error("saddle-point solver failed at mu = {mu} after {iters} iterations: {reason}")]
    SolverFailed { mu: f64, iters: usize, reason: String },

    #[error("entropy curve has no zero crossing; last point lambda = {lambda}, sigma = {sigma}")]
    Unbracketed { lambda: f64, sigma: f64 },

    #[error("ladder gap between rungs {0} and {1}: histogram supports do not overlap")]
    LadderGap(usize, usize),

    #[error("enumeration of {count} subsets exceeds the limit of {limit}")]
    EnumerationTooLarge { count: f64, limit: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
