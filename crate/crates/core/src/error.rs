use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("document {id:?} is missing required field `{field}`")]
    MissingField { id: String, field: &'static str },

    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("phase {phase}, domain {domain}: shift of {delta_points:.3} points exceeds cap of {cap_points} points")]
    ShiftViolation {
        phase: usize,
        domain: String,
        delta_points: f64,
        cap_points: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("hash collision between distinct n-grams (hash {hash:#018x})")]
    HashCollision { hash: u64 },

    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn decode(offset: usize, message: impl Into<String>) -> Self {
        Error::Decode {
            offset,
            message: message.into(),
        }
    }
}
