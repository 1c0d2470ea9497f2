use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("malformed page: item {item} appears in channels {first} and {second}")]
    MalformedPage {
        item: String,
        first: usize,
        second: usize,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
    #[error("not enough candidates: need {needed}, have {available}")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
