use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("{path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("duplicate utterance key `{0}`")]
    DuplicateKey(String),

    #[error("invalid record `{key}`: {reason}")]
    InvalidRecord { key: String, reason: String },

    #[error("shard {shard}: entry `{entry}`: {reason}")]
    Shard {
        shard: PathBuf,
        entry: String,
        reason: String,
    },

    #[error("wav `{key}`: {reason}")]
    Wav { key: String, reason: String },

    #[error("unknown speaker label `{0}`")]
    UnknownSpeaker(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {layer}: {reason}")]
    Shape { layer: String, reason: String },

    #[error("tensor container: {0}")]
    Tensor(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("session is closed")]
    SessionClosed,

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io_at(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }
}
