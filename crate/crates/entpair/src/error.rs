use std::path::{Path, PathBuf};

use crate::fptn::FptnError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Fptn { path: PathBuf, source: FptnError },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] entpair_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), message: message.into() }
    }

    /// Process exit code: 2 bad arguments, 3 format errors, 4 protocol
    /// infeasibility, 5 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use entpair_core::Error as C;
        match self {
            Error::Usage(_) => 2,
            Error::Io { .. } => 1,
            Error::Fptn { .. } | Error::Format { .. } => 3,
            Error::Core(e) => match e {
                C::InvalidConfig(_) => 2,
                C::ShapeMismatch { .. } | C::InvalidShape(_) | C::InvalidData(_) | C::InvalidTarget(_) => 3,
                C::Infeasible(_) | C::Empty(_) => 4,
                C::Numerical(_) => 5,
                C::MissingCache | C::UninitializedStats => 1,
            },
        }
    }
}
