use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller-supplied data.
    #[error("input error: {0}")]
    Input(String),

    /// A value that should be impossible given validated inputs.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Argument outside the mathematical domain of a function (e.g. non-PD matrix in a log-det).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver did not converge after {iterations} iterations: {message} (subgradient {subgradient:.3e})")]
    Convergence {
        message: String,
        iterations: usize,
        subgradient: f64,
        last_iterate: Box<DMatrix<f64>>,
    },

    /// Internal consistency check failed; indicates a bug rather than bad input.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn is_input(&self) -> bool {
        matches!(self, Error::Input(_) | Error::Io(_) | Error::Json(_))
    }
}
