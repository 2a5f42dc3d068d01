use alloc::boxed::Box;
use alloc::string::String;

use crate::model::DiscreteParams;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter or derived value left its admissible domain.
    #[error("domain error in `{field}`: {reason}")]
    Domain { field: &'static str, reason: String },
    /// A floating point computation underflowed, overflowed or lost all mass.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Moment matching could not produce valid hyperparameters.
    #[error("prior elicitation failed: {0}")]
    Elicitation(String),
    /// Sampling grids do not line up.
    #[error("grid error: {0}")]
    Grid(String),
    /// Requested array sizes are not representable.
    #[error("size error: {0}")]
    Size(String),
    /// The Kalman recursions broke down.
    #[error("filter error at step {step}: {reason}")]
    Filter { step: usize, reason: String },
    /// Caller supplied inconsistent arguments.
    #[error("usage error: {0}")]
    Usage(String),
    /// A Gibbs step failed; carries the parameter state at the time.
    #[error("chain aborted at iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        source: Box<Error>,
        snapshot: Box<DiscreteParams>,
    },
}

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain { field, reason: reason.into() }
    }

    /// True for errors that come from bad inputs rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_) | Error::Grid(_) | Error::Size(_))
    }
}
