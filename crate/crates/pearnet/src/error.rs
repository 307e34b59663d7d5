use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("node {index} is degenerate (std {std:e} <= {floor:e})")]
    DegenerateNode { index: usize, std: f64, floor: f64 },

    #[error("correlation matrix is near-singular (|P| = {det:e} <= {floor:e})")]
    NearSingular { det: f64, floor: f64 },

    #[error("loss diverged at step {step}: {value}")]
    Diverged { step: usize, value: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}
