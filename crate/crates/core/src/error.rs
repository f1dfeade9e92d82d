use thiserror::Error;

/// Errors produced by the analysis and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid population parameters: {0}")]
    InvalidParams(String),

    #[error("invalid population strategy: {0}")]
    InvalidStrategy(String),

    #[error("token supply {alpha} must lie in (0, {max_threshold})")]
    InvalidSupply { alpha: f64, max_threshold: u32 },

    #[error("degenerate steady state (mu = {mu}, nu = {nu})")]
    DegenerateState { mu: f64, nu: f64 },

    #[error("root finding did not converge: {0}")]
    NoConvergence(String),

    #[error("no root of {0} in the search bracket")]
    NoRoot(&'static str),

    #[error("no equilibrium threshold protocol found: {0}")]
    NoEquilibriumFound(String),

    #[error("infeasible token allocation: {tokens} tokens exceed capacity {capacity}")]
    InfeasibleAllocation { tokens: u64, capacity: u64 },

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Stable variant name, used in machine-readable diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "InvalidParams",
            Error::InvalidStrategy(_) => "InvalidStrategy",
            Error::InvalidSupply { .. } => "InvalidSupply",
            Error::DegenerateState { .. } => "DegenerateState",
            Error::NoConvergence(_) => "NoConvergence",
            Error::NoRoot(_) => "NoRoot",
            Error::NoEquilibriumFound(_) => "NoEquilibriumFound",
            Error::InfeasibleAllocation { .. } => "InfeasibleAllocation",
            Error::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
