//! CLI-level errors mapped onto the process exit codes: 1 for command-line
//! misuse, 2 for unreadable or invalid files and configs, 3 for numeric
//! failures during training or evaluation.

use std::io;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<daomix::Error> for CliError {
    fn from(e: daomix::Error) -> Self {
        match e {
            daomix::Error::Numeric(_) | daomix::Error::Domain(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
