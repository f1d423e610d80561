//! Crate-wide error type. The CLI maps `Config` to exit code 2 and
//! everything else to exit code 1.

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// Bad user-supplied configuration (unknown keys, invalid values,
    /// inconsistent settings). Deterministic and fixable before running.
    #[error("config error: {0}")]
    Config(String),

    /// Corpus, vocabulary, or other input-data problems.
    #[error("data error: {0}")]
    Data(String),

    /// A translation example with nothing to supervise.
    #[error("empty supervision: target must contain at least one token")]
    EmptySupervision,

    /// Truncation or masking removed every supervised position.
    #[error("no supervised positions left in batch")]
    NoSupervisedPositions,

    #[error("example of length {len} exceeds max_len {max_len} and truncation is disabled")]
    TooLong { len: usize, max_len: usize },

    #[error("sequence too short: length {len} cannot host {spans} non-adjacent spans of {noise} noise tokens")]
    SequenceTooShort {
        len: usize,
        spans: usize,
        noise: usize,
    },

    #[error("sentinel budget exceeded: {spans} spans requested but only {budget} sentinel ids are reserved")]
    SentinelBudget { spans: usize, budget: usize },

    /// Training loss became non-finite.
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for configuration mistakes, 1 for runtime
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
