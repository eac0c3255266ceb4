use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("agent index {agent} out of range for {agents} agents")]
    AgentOutOfRange { agent: usize, agents: usize },
    #[error("allocation index {allocation} out of range for {size} allocations")]
    AllocationOutOfRange { allocation: usize, size: usize },
    #[error("predictor polytope is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("allocation space of size {size} exceeds cap {cap}")]
    CapExceeded { size: u128, cap: usize },
    #[error("validation failed: {0}")]
    Validation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
