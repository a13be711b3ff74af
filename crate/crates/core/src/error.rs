use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("invalid {what}: {reason}")]
    Validation { what: String, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular augmentation: sum of text coordinates over the subspace is {0:e}")]
    SingularAugmentation(f64),

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("missing fixture key `{0}`")]
    MissingKey(String),

    #[error("non-finite {term} at step {step}")]
    NumericAbort { step: usize, term: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

}

/// Deserializes JSON, reporting failures with the field path and line/column.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, source_name: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            source_name: source_name.to_string(),
            location: format!("`{path}` (line {} column {})", inner.line(), inner.column()),
            message: inner.to_string(),
        }
    })
}
