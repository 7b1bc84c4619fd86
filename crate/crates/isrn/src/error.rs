//! Crate-wide error type.
//!
//! Variants are grouped by how callers react to them: the CLI maps
//! [`Error::Config`] to exit code 2, [`Error::Data`] to 3 and
//! [`Error::NonFinite`] to 4, so failure causes stay distinguishable all the
//! way to the shell.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violates an operation's precondition (bad stride, even
    /// blur kernel, zero-sized output, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration file or flag could not be parsed or is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint was produced under a different model configuration than
    /// the one it is being loaded into.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    /// A checkpoint file is structurally broken (truncated blob, bad magic,
    /// missing parameter). Nothing is partially loaded.
    #[error("checkpoint integrity: {0}")]
    CheckpointIntegrity(String),

    /// A NaN or infinity appeared where only finite values are legal.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Input images or directories are missing or unreadable.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach the offending path to an io error; `?` alone would lose it.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// The process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigMismatch(_) => 2,
            Error::Data(_) => 3,
            Error::NonFinite(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
