use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HaznError>;

#[derive(Debug, Error)]
pub enum HaznError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl HaznError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        HaznError::InvalidArgument(msg.into())
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        HaznError::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HaznError::Io {
            path: path.into(),
            source,
        }
    }
}
