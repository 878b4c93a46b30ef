use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{function} is undefined at {value}")]
    Domain { function: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no gradient recorded for parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("{stage} diverged at epoch {epoch} (loss {loss})")]
    Divergence {
        stage: String,
        epoch: usize,
        loss: f64,
    },

    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing channel `{channel}` in {}", file.display())]
    MissingChannel { file: PathBuf, channel: String },

    #[error("class `{class}` has {available} instances, {requested} requested")]
    InsufficientInstances {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("prerequisite stage `{stage}` has not been run: {detail}")]
    Prerequisite { stage: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidParameter(_) => 1,
            Error::Prerequisite { .. } => 2,
            Error::NonFinite { .. } | Error::Divergence { .. } | Error::Domain { .. } => 3,
            _ => 1,
        }
    }
}
