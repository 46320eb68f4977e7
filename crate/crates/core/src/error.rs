use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration or data that breaks a model invariant. `path` locates
    /// the offending entry (e.g. `lines[2].to`).
    #[error("invalid {path}: {message}")]
    Validation { path: String, message: String },

    #[error("{file}:{row}: {message}")]
    Trace {
        file: PathBuf,
        row: usize,
        message: String,
    },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("no equilibrium after {iterations} outer iterations; recent mixes: {trace}")]
    IterationCap { iterations: usize, trace: String },

    #[error("config parse error: {0}")]
    Config(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}
