use std::fmt;

pub type CliResult<T> = Result<T, CliError>;

/// Failures split by exit code: configuration and usage problems exit 1,
/// everything that goes wrong while running exits 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<wrinkle_core::Error> for CliError {
    fn from(e: wrinkle_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
