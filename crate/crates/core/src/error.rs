use thiserror::Error;

use crate::systems::Interpretation;

/// Errors raised by sampling, integration and gradient routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    /// A documented precondition of an operation was not met.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("query time {t} outside [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("solution diverged (non-finite state) at t = {t}")]
    Divergence { t: f64 },

    #[error("step size {h} underflowed at t = {t}; problem may be stiff")]
    StepUnderflow { t: f64, h: f64 },

    #[error("scheme {scheme} requires a {expected:?} system, got {found:?}")]
    Interpretation {
        scheme: &'static str,
        expected: Interpretation,
        found: Interpretation,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("diffusion component {index} = {value:e} is too close to zero")]
    NearSingularDiffusion { index: usize, value: f64 },
}

pub type Result<T, E = SdeError> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> SdeError {
    SdeError::Contract(msg.into())
}
