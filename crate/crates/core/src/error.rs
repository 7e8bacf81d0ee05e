use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("incompatible model: {0}")]
    IncompatibleModel(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("filter {filter} cannot be optimized with a {aspect} scorer")]
    InvalidPairing { filter: String, aspect: String },

    #[error("training diverged: {0}")]
    Training(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by configuration or missing inputs rather than
    /// a failure while processing.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::IncompatibleModel(_)
                | Error::MissingArtifact(_)
                | Error::InvalidPairing { .. }
        )
    }
}
