use std::path::{Path, PathBuf};

/// Failures surfaced by the file formats and the command line.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] xtime_core::Error),
}

pub type AppResult<T> = Result<T, AppError>;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        AppError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use xtime_core::Error as E;
        match self {
            AppError::Usage(_) => EXIT_USAGE,
            AppError::Numerical(_) => EXIT_NUMERICAL,
            AppError::Core(E::Diverged { .. } | E::NonFiniteGradient(_)) => EXIT_NUMERICAL,
            AppError::Io { .. } | AppError::Format { .. } | AppError::Data(_) | AppError::Core(_) => EXIT_DATA,
        }
    }
}
