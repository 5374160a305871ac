use thiserror::Error;

use crate::dist::Violation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("not a probability distribution: {0}")]
    Simplex(#[from] Violation),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    Index { id: usize, vocab: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
