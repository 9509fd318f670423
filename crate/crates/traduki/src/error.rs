//! Crate-wide error type.
//!
//! One enum covers the whole pipeline so stages compose without conversion
//! noise; the CLI maps variants onto its exit-code contract (1 usage, 2 data,
//! 3 runtime).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a precondition.
    #[error("invalid config: {0}")]
    Config(String),

    /// Input data violates a contract (schema, shape, token range).
    #[error("invalid data: {0}")]
    Data(String),

    /// A model input does not satisfy an operation's precondition.
    #[error("model input: {0}")]
    ModelInput(String),

    /// Example cannot be rendered under the requested prompt variant.
    #[error("format: {0}")]
    Format(String),

    /// The requested evaluation is undefined for this checkpoint.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Ill-formed serialized artifact.
    #[error("parse {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }

    /// Exit code class for the CLI: 2 for data problems, 3 for runtime failures.
    ///
    /// Usage errors (exit 1) are produced by argument parsing before an
    /// `Error` value ever exists.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Data(_) | Error::Parse { .. } | Error::Unsupported(_) => 2,
            Error::ModelInput(_) | Error::Format(_) | Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
