use std::fmt;

/// Failure classes that map onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, inconsistent inputs or failed checks (exit 1).
    Validation(String),
    /// Anything else that went wrong while running (exit 2).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<ldct::Error> for CliError {
    fn from(e: ldct::Error) -> Self {
        match e {
            ldct::Error::InvalidArgument(_) | ldct::Error::DimensionMismatch(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Validation(msg.into()))
}
