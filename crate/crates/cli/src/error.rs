use channelpage_core::lp::ConstraintFamily;
use channelpage_models::ModelError;
use channelpage_sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("request {request}: allocation infeasible ({family})")]
    Infeasible { request: usize, family: ConstraintFamily },
    #[error("request {request}: allocation failed verification: {detail}")]
    Verification { request: usize, detail: String },
    #[error(transparent)]
    Core(#[from] channelpage_core::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit statuses. Usage errors exit with 2, as reported by clap.
pub mod exit {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const CONFIG: u8 = 3;
    pub const DATA: u8 = 4;
    pub const INFEASIBLE: u8 = 5;
}

impl Error {
    pub fn exit_code(&self) -> u8 {
        use channelpage_core::Error as Core;
        match self {
            Self::Config(_) | Self::Toml(_) => exit::CONFIG,
            Self::Data(_) | Self::Json(_) => exit::DATA,
            Self::Infeasible { .. } | Self::Verification { .. } => exit::INFEASIBLE,
            Self::Io(_) => exit::IO,
            Self::Core(e) | Self::Model(ModelError::Core(e)) | Self::Sim(SimError::Core(e)) => match e {
                Core::Config(_) => exit::CONFIG,
                Core::InsufficientCandidates { .. } => exit::INFEASIBLE,
                Core::Io(_) => exit::IO,
                _ => exit::DATA,
            },
            Self::Model(ModelError::Config(_)) | Self::Sim(SimError::Config(_)) => exit::CONFIG,
            Self::Model(ModelError::Io(_)) => exit::IO,
            Self::Model(_) | Self::Sim(_) => exit::DATA,
        }
    }
}
