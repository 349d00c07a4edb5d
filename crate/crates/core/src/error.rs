use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("duplicate message id {0:?}")]
    DuplicateId(String),

    #[error("message {0:?} has no thread label")]
    MissingThreadLabel(String),

    #[error("invalid message {id:?}: {reason}")]
    InvalidMessage { id: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("corpus is not sorted by (timestamp, id) at position {0}")]
    UnsortedCorpus(usize),

    #[error("scorer failure: {0}")]
    Scorer(String),

    #[error("generator failure: {0}")]
    Generator(String),

    #[error("network error after {attempts} attempt(s): {reason}")]
    Network { attempts: u32, reason: String },

    #[error("endpoint returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },

    #[error("endpoint does not return token log-probabilities")]
    NoLogprobs,

    #[error("priority queue is empty")]
    EmptyQueue,

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
