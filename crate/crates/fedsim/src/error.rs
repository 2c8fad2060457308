//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event scheduled in the past: at={at} now={now}")]
    EventInPast { at: f64, now: f64 },

    #[error("unknown actor: {0}")]
    UnknownActor(String),

    #[error("task generation: {0}")]
    Task(String),

    #[error("partition: {0}")]
    Partition(String),

    #[error("training: {0}")]
    Training(String),

    #[error("non-finite gradient at parameter {index} (value {value})")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("ledger: {0}")]
    Ledger(String),

    #[error("transaction timestamp regression: t={t} after last={last}")]
    TimeRegression { t: f64, last: f64 },

    #[error("consensus: {0}")]
    Consensus(String),

    #[error("agent: {0}")]
    Drl(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("config: {0}")]
    Config(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
