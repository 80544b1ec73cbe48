use std::path::PathBuf;

/// Unified error for every fallible operation in this crate.
///
/// Numeric code reports `Shape`/`InvalidArgument`/`NonFinite`; the archive
/// reader distinguishes structural nonsense (`Format`, `Corrupt`) from a
/// version written by a newer tool (`UnsupportedVersion`) so callers can
/// give sensible advice.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("archive format: {0}")]
    Format(String),

    #[error("archive corrupt: {0}")]
    Corrupt(String),

    #[error("unsupported archive version {found}, this build reads up to {supported}")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
