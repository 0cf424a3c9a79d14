use std::process::ExitCode;

use crate::config::ParseError;

/// Failure of a subcommand, mapped to a stable exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Exit 1.
    #[error("verification failed: {0}")]
    Verification(String),
    /// Exit 2.
    #[error("config error in {path}: {source}")]
    Parse { path: String, source: ParseError },
    /// Exit 2.
    #[error("config error: {0}")]
    Config(String),
    /// Exit 2.
    #[error("i/o error: {0}")]
    Io(String),
    /// Exit 3. `message` already names the step when there is one.
    #[error("{message}")]
    Numeric { step: Option<usize>, message: String },
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Parse { .. } | CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric { .. } => 3,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl From<ogpsa::Error> for CliError {
    fn from(e: ogpsa::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric {
                step: e.step(),
                message: e.to_string(),
            }
        } else if let ogpsa::Error::Io(m) = e {
            CliError::Io(m)
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
