use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A stochastic simulation left the admissible state space.
    #[error("simulation fault at t = {t} s: {reason}")]
    SimulationFault { t: f64, reason: String, counts: Vec<u64> },

    #[error("ensemble member with seed {seed} failed: {source}")]
    EnsembleFault { seed: u64, source: Box<Error> },

    #[error("training fault at step {step}: {reason}")]
    TrainingFault { step: usize, reason: String },

    #[error("rollout fault at step {step}: state is not finite")]
    RolloutFault { step: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn dimension(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
