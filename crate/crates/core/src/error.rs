use thiserror::Error;

/// Everything that can go wrong inside the engine, the designs or the
/// reference formulas.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("arm count mismatch: design has {design} arms, model has {model}")]
    ArmMismatch { design: usize, model: usize },

    #[error("urn has no drawable mass (treatment mass {treatment}, immigration {immigration})")]
    EmptyUrn { treatment: f64, immigration: f64 },

    #[error("immigration loop did not produce a treatment ball after {0} draws")]
    ImmigrationLoop(usize),

    #[error("arm {arm} has no assignments yet; allocation function needs N_k > 0")]
    ZeroAllocation { arm: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
