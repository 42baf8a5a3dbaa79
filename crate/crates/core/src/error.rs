use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or a configuration that cannot be honored.
    #[error("configuration error: {0}")]
    Config(String),

    /// Array shapes that do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Training or evaluation data that violates a precondition.
    #[error("data error: {0}")]
    Data(String),

    /// A call argument outside its valid range.
    #[error("argument error: {0}")]
    Argument(String),

    /// Two objects built from different configurations were combined.
    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    /// Malformed bytes in an input file.
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decoding failed for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}
