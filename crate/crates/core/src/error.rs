use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("oracle instance too large: {bids} bids exceeds cap of {cap}")]
    OracleTooLarge { bids: usize, cap: usize },
    #[error("training diverged: {0}")]
    Divergence(String),
}

pub type Result<T, E = MarketError> = std::result::Result<T, E>;
