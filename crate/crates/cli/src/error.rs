use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes; stable across releases.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VERIFICATION_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fastattn::Error),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use fastattn::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Output { .. } => exit::IO,
            CliError::Core(e) => match e.root() {
                E::InvalidArgument(_) | E::Config(_) => exit::USAGE,
                E::State(_) => exit::VERIFICATION_FAILED,
                E::Shape { .. }
                | E::BadMagic { .. }
                | E::UnsupportedVersion(_)
                | E::UnsupportedDtype(_)
                | E::Truncated { .. }
                | E::TrailingBytes { .. }
                | E::Io { .. }
                | E::InFile { .. }
                | E::Manifest { .. } => exit::IO,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
