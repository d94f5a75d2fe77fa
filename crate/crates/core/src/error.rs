use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch on axis `{axis}`: expected {expected}, found {found}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("non-finite value in {context} at iteration {iteration}")]
    NonFinite { context: String, iteration: usize },

    #[error(
        "non-finite ELBO: log prior = {log_prior}, log likelihood = {log_likelihood}, entropy = {entropy}"
    )]
    NonFiniteElbo {
        log_prior: f64,
        log_likelihood: f64,
        entropy: f64,
    },

    #[error(
        "non-finite loss at step {step}: elbo = {elbo}, supervised = {supervised}, adversarial = {adversarial}"
    )]
    NonFiniteLoss {
        step: u64,
        elbo: f64,
        supervised: f64,
        adversarial: f64,
    },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::DimensionMismatch { .. }
                | Error::Format { .. }
                | Error::Undefined(_)
        )
    }
}
