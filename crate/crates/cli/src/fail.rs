//! CLI failure classification. Every error is sorted into one of three
//! buckets with a distinct process exit code, so scripts can tell a bad
//! config from a missing dataset from a run that fell over.

use std::fmt::Display;

/// Exit code for configuration problems: unparsable file, unknown keys,
/// missing section, invalid values.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for ingestion problems: dataset or checkpoint files that
/// cannot be read or fail validation.
pub const EXIT_INGEST: i32 = 3;
/// Exit code for run failures: training diverged, infeasible scenario,
/// unwritable outputs.
pub const EXIT_RUN: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error("run error: {0}")]
    Run(String),
}

impl CliError {
    pub fn config(why: impl Display) -> CliError {
        CliError::Config(why.to_string())
    }

    pub fn ingest(why: impl Display) -> CliError {
        CliError::Ingest(why.to_string())
    }

    pub fn run(why: impl Display) -> CliError {
        CliError::Run(why.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Ingest(_) => EXIT_INGEST,
            CliError::Run(_) => EXIT_RUN,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
