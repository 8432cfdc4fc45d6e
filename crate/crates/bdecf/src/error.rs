//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("no interactions")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown user id {0}")]
    UnknownUser(usize),

    #[error("unknown item id {0}")]
    UnknownItem(usize),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        value: f64,
    },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint/dataset mismatch: {0}")]
    DatasetMismatch(String),

    #[error("scorer failed on pair (user {user}, item {item}): {source}")]
    ScorerFailure {
        user: usize,
        item: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code for the CLI: distinct codes per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::EmptyDataset
            | Error::UnknownUser(_)
            | Error::UnknownItem(_)
            | Error::DatasetMismatch(_) => 3,
            Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
