//! Homepage allocation engine: page data model, the diversity-constrained
//! channel allocation program, greedy diversity baselines, and evaluation
//! metrics.

pub mod baselines;
pub mod diversity;
mod error;
pub mod io;
pub mod lp;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;
