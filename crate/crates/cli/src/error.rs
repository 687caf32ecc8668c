use std::fmt::Display;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn config(e: impl Display) -> Self {
        Self::Config(e.to_string())
    }

    /// Process exit code: 2 config, 3 runtime, 4 verification.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
            Self::Verification(_) => 4,
        }
    }
}

impl From<instant_core::Error> for CliError {
    fn from(e: instant_core::Error) -> Self {
        match e {
            instant_core::Error::Config(msg) => Self::Config(msg),
            other => Self::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}
