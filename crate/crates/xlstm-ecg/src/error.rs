//! Error type shared by the loaders, file formats and the command line.

use std::io;
use std::path::{Path, PathBuf};

use xlstm_ecg_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad flags, bad configuration file or unknown keys.
    #[error("usage error: {0}")]
    Usage(String),
    /// Missing, malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),
    /// Training or evaluation produced non-finite numbers.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl AppError {
    pub fn usage(msg: impl Into<String>) -> Self {
        AppError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        AppError::Data(msg.into())
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) | AppError::Io { .. } => 2,
            AppError::Numeric(_) => 3,
        }
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        if e.is_numeric() {
            AppError::Numeric(e.to_string())
        } else {
            AppError::Data(e.to_string())
        }
    }
}

/// Reads a whole file, attaching the path to any failure.
pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| AppError::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}
