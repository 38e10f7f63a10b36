use thiserror::Error;

/// Errors raised by the simulator and the experiment layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KgError {
    /// One of the standing model assumptions does not hold.
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("no admissible section crossing between the bracketing states")]
    NoCrossing,

    #[error("projection onto the periodic orbit is undefined: {0}")]
    ProjectionUndefined(String),

    /// No first return was observed before the time budget ran out.
    #[error("no return to the section within t = {waited} (loop {loop_index})")]
    NoReturn { loop_index: usize, waited: f64 },

    #[error("perturbation mode set is empty")]
    EmptyModeSet,

    #[error("insufficient samples: need at least {needed}, found {found}")]
    InsufficientSamples { needed: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, KgError>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(KgError::DimensionMismatch { expected, found })
    }
}
