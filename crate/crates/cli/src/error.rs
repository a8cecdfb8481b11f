use std::path::PathBuf;

use mmfit_core::ErrorKind;

/// Process exit codes.
pub mod exit {
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const MODEL: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mmfit_core::Error),
    /// A problem in an input file. `line` is 1-based and counts the header.
    #[error("{}{}: {message}", .file.display(), .line.map(|l| format!(":{l}")).unwrap_or_default())]
    Input {
        file: PathBuf,
        line: Option<u64>,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {}: {source}", .path.display())]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(file: impl Into<PathBuf>, line: Option<u64>, message: impl Into<String>) -> Self {
        CliError::Input {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Data => exit::DATA,
                ErrorKind::Model => exit::MODEL,
                ErrorKind::Numeric => exit::NUMERIC,
            },
            CliError::Input { .. } => exit::DATA,
            CliError::Usage(_) | CliError::Output { .. } => exit::USAGE,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
