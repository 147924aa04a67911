use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, length, ordering).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Input rejected before any work was done, e.g. non-finite objective at the start point.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite state at horizon step {step}")]
    NonFinite { step: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },

    #[error("unknown scenario `{name}`; valid names: {valid}")]
    UnknownScenario { name: String, valid: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration or input files.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::Parse { .. }
                | Error::Config { .. }
                | Error::UnknownScenario { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
