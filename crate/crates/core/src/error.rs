//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A descriptor, config value, or argument failed validation.
    #[error("invalid {what}: {why}")]
    Invalid { what: String, why: String },

    /// Dataset or model file could not be read or parsed.
    #[error("failed to read {path}: {why}")]
    Read { path: PathBuf, why: String },

    /// Dataset or model file could not be written.
    #[error("failed to write {path}: {why}")]
    Write { path: PathBuf, why: String },

    /// A run-time condition made an experiment impossible to carry out
    /// (for example an empty fine-tuning set or no still samples).
    #[error("{0}")]
    Run(String),
}

impl Error {
    pub fn invalid(what: impl Into<String>, why: impl Into<String>) -> Self {
        Error::Invalid { what: what.into(), why: why.into() }
    }

    pub fn run(why: impl Into<String>) -> Self {
        Error::Run(why.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
