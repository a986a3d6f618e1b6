use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unparseable or out-of-range configuration (exit 2).
    Config(String),
    /// The time integration could not proceed (exit 3).
    Integration(String),
    /// An asserting experiment did not pass (exit 4).
    Assertion(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Integration(_) => 3,
            CliError::Assertion(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Integration(m) => write!(f, "integration failure: {m}"),
            CliError::Assertion(m) => write!(f, "assertion failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<breakcoag_core::Error> for CliError {
    fn from(e: breakcoag_core::Error) -> Self {
        match e {
            breakcoag_core::Error::Integration { .. } => CliError::Integration(e.to_string()),
            breakcoag_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Config(other.to_string()),
        }
    }
}
