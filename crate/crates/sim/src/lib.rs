//! Synthetic homepage world: catalog, channels, a clustered user
//! population and a ground-truth click model with category repetition
//! effects and same-channel sibling interactions.

mod config;
mod error;
mod logs;
mod oracle;
mod world;

pub use config::{CategorySpec, SimConfig};
pub use error::{Result, SimError};
pub use logs::{sample_candidates, sample_request, simulate_logs, RandomPagePolicy};
pub use oracle::ClickOracle;
pub use world::{generate_world, Latent, World, WorldManifest};
