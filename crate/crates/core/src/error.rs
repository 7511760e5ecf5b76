use thiserror::Error;

/// Errors raised by the estimators, solvers and dataset I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dataset line {line}: {message}")]
    MalformedDataset { line: usize, message: String },

    #[error("zero behavior probability for action {action} in state {state} where the target has support")]
    MissingSupport { state: usize, action: usize },

    #[error("training diverged at step {step}: loss {loss:e} ({hint})")]
    Diverged { step: usize, loss: f64, hint: &'static str },

    #[error("{0} policies exceed the limit of {1} for this selection mode")]
    TooManyPolicies(usize, usize),

    #[error("ranking score {0} is not invariant to ordering within the top-k; set enumeration does not apply")]
    NotSetBased(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
