use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. Load failures each have their own
/// variant so callers (and the CLI exit codes) can tell them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error at layer `{layer}`: {message}")]
    Shape { layer: String, message: String },

    #[error("non-finite value produced at `{location}`")]
    Numerics { location: String },

    #[error("arity error: {0}")]
    Arity(String),

    #[error("index {index} out of range for {count} classes")]
    Index { index: usize, count: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt model: {0}")]
    Corruption(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("layer `{layer}` is not supported by rule {rule}")]
    UnsupportedRule { layer: String, rule: String },

    #[error("conversion error at layer `{layer}`: {message}")]
    Conversion { layer: String, message: String },
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
