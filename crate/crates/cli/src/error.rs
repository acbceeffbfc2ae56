//! CLI error classes mapped onto process exit codes.

use std::fmt;

use fpa_core::Error as CoreError;

/// Exit codes: 2 config error, 3 data error, 4 numerical divergence.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    /// Wrap a core error, classifying divergence explicitly and everything
    /// else under the given default class.
    pub fn from_core(err: CoreError, default_data: bool) -> CliError {
        match err {
            CoreError::Divergence { .. } => CliError::Divergence(err.to_string()),
            CoreError::Io(_)
            | CoreError::IdxBadMagic { .. }
            | CoreError::IdxTruncated { .. }
            | CoreError::IdxCountMismatch { .. }
            | CoreError::EmptyDataset
            | CoreError::ZeroStd { .. }
            | CoreError::Checkpoint(_) => CliError::Data(err.to_string()),
            _ if default_data => CliError::Data(err.to_string()),
            _ => CliError::Config(err.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Divergence(msg) => write!(f, "numerical divergence: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn config_err(err: CoreError) -> CliError {
    CliError::from_core(err, false)
}

pub fn data_err(err: CoreError) -> CliError {
    CliError::from_core(err, true)
}

pub fn io_data_err(context: &str, err: std::io::Error) -> CliError {
    CliError::Data(format!("{context}: {err}"))
}
