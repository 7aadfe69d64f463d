//! CLI error taxonomy, mapped onto process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration: parse failure or semantic violations (exit 2).
    /// Carries every violation found, not just the first.
    #[error("configuration error:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// Numerical failure such as a NaN in the results (exit 3).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Filesystem trouble (exit 4).
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<bfn_core::Error> for CliError {
    fn from(e: bfn_core::Error) -> Self {
        match &e {
            bfn_core::Error::NonFinite(_) | bfn_core::Error::Stiffness(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Config(vec![e.to_string()]),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
