use std::fmt;

use stratum_core::Error;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_INVALID_INPUT: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub exit_code: u8,
    pub message: String,
}

impl CliError {
    pub fn invalid(message: impl fmt::Display) -> Self {
        Self {
            exit_code: EXIT_INVALID_INPUT,
            message: message.to_string(),
        }
    }

    pub fn internal(message: impl fmt::Display) -> Self {
        Self {
            exit_code: EXIT_INTERNAL,
            message: message.to_string(),
        }
    }

    /// Prefixes the message, keeping the exit code.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self {
            message: format!("{what}: {}", self.message),
            ..self
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Failures of the tool itself (I/O while writing, broken component
/// contracts) are internal; everything else traces back to the input.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Json(_) | Error::Bookkeeping(_) | Error::ContractViolation { .. } => {
                Self::internal(e)
            }
            e => Self::invalid(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::internal(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
