//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoalError {
    #[error("integral diverges: {detail}")]
    NonIntegrable { detail: String },

    #[error("quadrature failed: {detail}")]
    QuadratureFailure { detail: String },

    #[error("operation requires a simple coalescent (m_-2 < inf)")]
    SimpleCoalescentRequired,

    #[error("operation requires a coalescent with dust (m_-1 < inf)")]
    DustRequired,

    #[error("domain error: {detail}")]
    DomainError { detail: String },

    #[error("pmf ratio underflowed at k = {k}")]
    DivisionUnderflow { k: u64 },

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("no verification criterion implemented for this parameter row: {detail}")]
    UnsupportedRow { detail: String },

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: u64,
        #[source]
        source: Box<CoalError>,
    },
}

impl CoalError {
    pub fn domain(detail: impl Into<String>) -> Self {
        CoalError::DomainError {
            detail: detail.into(),
        }
    }
}
