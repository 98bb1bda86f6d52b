use std::path::PathBuf;

/// Errors raised anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at {location}: expected {expected}, found {found}")]
    Shape {
        location: String,
        expected: String,
        found: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("index {index} out of range (len {len}) in {context}")]
    Range {
        index: usize,
        len: usize,
        context: String,
    },

    #[error("trace does not belong to this network: {0}")]
    Consistency(String),

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn shape(
        location: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            location: location.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user input (bad config, unreadable files,
    /// malformed data) rather than a failure during computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Io { .. } | Error::Parse { .. } | Error::Serialization(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
