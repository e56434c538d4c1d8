//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a precondition (non-finite value, dimension
    /// mismatch, out-of-range action, ...).
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A linear-algebra operation lost positive definiteness or produced
    /// non-finite values.
    #[error("numerical conditioning failure: {0}")]
    Numerical(String),

    /// A configuration value is inconsistent or unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// Too few observations for the requested fit.
    #[error("insufficient data: need at least {required}, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    /// An environment step failed; carries the step index within the episode.
    #[error("environment step {step} failed: {source}")]
    EnvStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// A driver round failed; carries round and candidate indices.
    #[error("round {round}, candidate {candidate}: {source}")]
    Driver {
        round: usize,
        candidate: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::EnvStep {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_round(self, round: usize, candidate: usize) -> Error {
        Error::Driver {
            round,
            candidate,
            source: Box::new(self),
        }
    }
}
