//! Learned components: the user-channel-item click model that scores
//! allocation candidates, and the hierarchical attention re-ranker.

pub mod ctr;
pub mod dhanr;
mod error;
pub mod eval;
mod init;

pub use error::ModelError;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
