use std::path::PathBuf;

/// Errors produced anywhere in the crate.
///
/// The CLI maps [`Error::Contract`], [`Error::Shape`] and [`Error::NonFinite`]
/// to exit code 1 and the I/O and parse variants to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller breaking a precondition, as
    /// opposed to the outside world (files, parsing).
    pub fn is_contract_violation(&self) -> bool {
        matches!(
            self,
            Error::Shape(_) | Error::Contract(_) | Error::NonFinite(_) | Error::Config(_)
        )
    }
}
