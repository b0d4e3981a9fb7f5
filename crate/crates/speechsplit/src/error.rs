use std::io;
use std::path::PathBuf;

/// Errors surfaced by the command-line tools, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: corrupt at byte offset {offset}: {what}", path.display())]
    Corrupt { path: PathBuf, offset: u64, what: String },
    #[error("{}: unsupported {format} version {found} (this build reads version {supported}); {hint}", path.display())]
    Version { path: PathBuf, format: String, found: u16, supported: u16, hint: String },
    #[error(transparent)]
    Core(#[from] speechsplit_core::Error),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Numerical(_) => 4,
            AppError::Core(e) if e.is_numerical() => 4,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            _ if self.exit_code() == 2 => "usage",
            _ if self.exit_code() == 4 => "numerical",
            AppError::Io { .. } => "io",
            AppError::Corrupt { .. } => "corrupt",
            AppError::Version { .. } => "version",
            _ => "data",
        }
    }

    /// Single-line `error[kind]: message` form for stderr.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.kind(), msg)
    }
}

pub type AppResult<T> = Result<T, AppError>;
