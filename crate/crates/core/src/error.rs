//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("unsupported file version: found {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },

    #[error("truncated payload: header declares {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },

    #[error("checksum failure: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed header: {0}")]
    Header(String),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 artifact, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Header(_) => 1,
            Error::MissingArtifact(_)
            | Error::VersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::Checksum { .. }
            | Error::Io(_) => 2,
            Error::DimMismatch { .. } | Error::NonFinite(_) | Error::Numerical(_) => 3,
        }
    }
}
