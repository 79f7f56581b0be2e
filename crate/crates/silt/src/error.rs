use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] silt_core::Error),
}

impl CliError {
    /// Stable identifier printed in the one-line error report.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "missing_file",
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Format(_) => "format",
            CliError::Usage(_) => "usage",
            CliError::Core(_) => "invalid_input",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
