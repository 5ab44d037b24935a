use std::io;
use std::path::Path;

/// Errors raised by corpus I/O, projection, model serialization and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed file content, with a 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A tag label that is not part of the active tagset.
    #[error("unknown tag `{0}`")]
    UnknownTag(String),

    /// A fine-grained tag with no entry in the mapping table.
    #[error("no mapping entry for tag `{0}`")]
    UnmappedTag(String),

    /// Array or sentence dimensions that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid or insufficient input data.
    #[error("{0}")]
    Data(String),

    /// A NaN or infinity showed up where a finite number is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Bad configuration key, value or flag combination.
    #[error("config: {0}")]
    Config(String),

    /// Corrupt, truncated or incompatible model file.
    #[error("model file: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Wraps an I/O error with the path it happened on.
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
