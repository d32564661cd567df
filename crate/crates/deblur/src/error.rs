use std::path::Path;

use deblur_core::Error as CoreError;

/// Failure of a subcommand, grouped by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Data(_) => exit::DATA,
            CliError::Numeric(_) => exit::NUMERIC,
        }
    }

    /// An IO failure on `path`.
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    /// A core failure while processing data: numeric problems keep their own
    /// class, configuration problems stay config errors, the rest is data.
    pub fn from_core(context: &str, err: CoreError) -> Self {
        let msg = if context.is_empty() { err.to_string() } else { format!("{context}: {err}") };
        match err {
            e if e.is_numeric() => CliError::Numeric(msg),
            CoreError::InvalidConfig(_) => CliError::Config(msg),
            _ => CliError::Data(msg),
        }
    }

    pub fn missing(path: &Path) -> Self {
        CliError::Data(format!("{}: no such file or directory", path.display()))
    }
}

pub(crate) fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

