//! Orchestration behind the `set2box` binary: configuration, artifacts
//! and subcommands.

pub mod artifact;
pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("corrupt or missing artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration errors, 3 for divergence, 4 for damaged
    /// artifacts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Artifact(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<set2box::Error> for CliError {
    fn from(e: set2box::Error) -> Self {
        use set2box::Error as E;
        match e {
            E::Divergence(m) => CliError::Divergence(m),
            E::Corrupt(m) => CliError::Artifact(m),
            E::Io(e) => CliError::Io(e),
            other => CliError::Config(other.to_string()),
        }
    }
}
