use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure classes the public
/// operations can hit: bad ids, malformed inputs, exceeded search budgets,
/// and broken internal invariants (which always indicate a bug, not a valid
/// negative result).
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown agent id {0}")]
    UnknownAgent(usize),

    #[error("unknown good id {0}")]
    UnknownGood(usize),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Removal-set search for tabulated monotonic utilities is exponential
    /// in c; checks are capped at c <= 3.
    #[error("monotonic utility check capped at c = 3, got c = {0}")]
    MonotonicCapExceeded(usize),

    #[error("search space of {required} allocations exceeds budget {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
