use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command layer, each with its own exit code.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: ungrounded_core::Error,
    },
    #[error(transparent)]
    Core(#[from] ungrounded_core::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type AppResult<T> = Result<T, AppError>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const IO: i32 = 5;
}

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn file(path: impl Into<PathBuf>, source: ungrounded_core::Error) -> Self {
        AppError::File { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use ungrounded_core::Error as E;
        let core_code = |e: &E| match e {
            E::Parameter(_) => exit::CONFIG,
            E::Format { .. } | E::EmptyInput(_) | E::Data(_) => exit::DATA,
            E::Numeric { .. } => exit::NUMERIC,
        };
        match self {
            AppError::Config(_) => exit::CONFIG,
            AppError::Io { .. } => exit::IO,
            AppError::File { source, .. } => core_code(source),
            AppError::Core(e) => core_code(e),
            AppError::Internal(_) => exit::INTERNAL,
        }
    }
}
