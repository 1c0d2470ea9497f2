use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    Config(String),
    #[error("user {0} is not part of the simulated population")]
    UnknownUser(String),
    #[error("bad page position: {0}")]
    Position(String),
    #[error(transparent)]
    Core(#[from] channelpage_core::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
