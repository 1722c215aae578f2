use thiserror::Error;

/// Errors raised by the detection pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {what} (got {value})")]
    Domain { what: &'static str, value: f64 },

    /// The observation is too short for the requested operation.
    #[error("unsupported size: need at least {needed} samples, got {got}")]
    UnsupportedSize { needed: usize, got: usize },

    /// The data carry no information about the parameters (for example a
    /// constant record).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A matrix that must be inverted is singular or badly conditioned.
    #[error("singular matrix ({which}): condition estimate {condition:e}")]
    Singular { which: &'static str, condition: f64 },

    /// The estimator stopped before meeting its stationarity tolerance.
    #[error(
        "estimator did not converge after {iterations} iterations (score norm {gradient_norm:e})"
    )]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },

    /// Partial tallies from different campaigns cannot be merged.
    #[error("campaign fingerprint mismatch: {expected:016x} vs {found:016x}")]
    CampaignMismatch { expected: u64, found: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(what: &'static str, value: f64) -> Error {
    Error::Domain { what, value }
}
