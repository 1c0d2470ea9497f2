//! Pipeline orchestration: simulated data, model training, allocation,
//! re-ranking and evaluation of the compared page construction methods.

pub mod commands;
pub mod config;
mod error;
pub mod evaluate;
pub mod experiment;
pub mod methods;
pub mod pipeline;

pub use config::{CtrVariant, ExperimentConfig, Overrides};
pub use error::{exit, Error, Result};
pub use experiment::{Evaluation, Experiment};
pub use methods::{Method, Planner, Request};
