use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("PLY parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("attributes absent: PLY vertex element lacks red/green/blue properties")]
    AttributesAbsent,
    #[error("empty cloud")]
    EmptyCloud,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("no overlap between rate-distortion curves ({0})")]
    NoOverlap(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
