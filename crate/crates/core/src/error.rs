use thiserror::Error;

pub type Result<T> = std::result::Result<T, PmdError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmdError {
    #[error("transition row ({state}, {action}) is not stochastic (sum = {row_sum})")]
    NonStochasticRow {
        state: usize,
        action: usize,
        row_sum: f64,
    },
    #[error("reward at ({state}, {action}) exceeds the reward bound")]
    RewardOutOfBound { state: usize, action: usize },
    #[error("discount must lie in (0, 1), got {0}")]
    BadGamma(f64),
    #[error("branching {branching} must lie in [1, {n_states}]")]
    InvalidBranching { branching: usize, n_states: usize },
    #[error("slip probability must lie in [0, 1), got {0}")]
    InvalidSlip(f64),
    #[error("goal ({0}, {1}) lies outside the grid")]
    GoalOutOfGrid(usize, usize),
    #[error("invalid MDP dimensions: {0}")]
    InvalidDimensions(String),

    #[error("vector is not a probability distribution")]
    NotADistribution,
    #[error("q(a) = 0 where p(a) > 0")]
    SupportMismatch,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("entropy weight must be positive, got {0}")]
    TauNonPositive(f64),
    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Q-stack is empty")]
    EmptyStack,
    #[error("logits contain non-finite values")]
    NonFiniteLogits,
    #[error("operation requires a finite-memory variant")]
    VariantMismatch,
    #[error("action space too large for grid search: {0} actions")]
    ActionSpaceTooLarge(usize),
    #[error("epsilon must lie in [0, 1], got {0}")]
    EpsOutOfRange(f64),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for PmdError {
    fn from(e: std::io::Error) -> Self {
        PmdError::Io(e.to_string())
    }
}
