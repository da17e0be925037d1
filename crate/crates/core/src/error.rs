use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in a scenario file could not be parsed or violates a unit constraint.
    #[error("line {line}: {field}: {message}")]
    Record {
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid scene {scene}: {message}")]
    InvalidScene { scene: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn scene(scene: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidScene {
            scene: scene.into(),
            message: message.into(),
        }
    }
}
