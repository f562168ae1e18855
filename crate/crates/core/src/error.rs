use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// The variants map onto the exit-code taxonomy of the command-line front
/// end: shape/argument/format/checkpoint problems are data errors,
/// [`Error::NonFinite`] is a numeric failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid use: {0}")]
    InvalidUse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("architecture error in {layer}: {message}")]
    Construction { layer: String, message: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("corrupt checkpoint: {0}")]
    Integrity(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (L_Dx = {l_dx}, L_AE = {l_ae})"
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        l_dx: f64,
        l_ae: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
