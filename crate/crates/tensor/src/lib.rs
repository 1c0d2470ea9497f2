//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! Everything is `f64` and row-major. A [`Graph`] is a tape: every operation
//! appends a node, and [`Graph::backward`] walks the tape in reverse. Graphs
//! are cheap and meant to live for one forward/backward pass.

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, read_checkpoint_json, write_checkpoint,
    write_checkpoint_json,
};
pub use error::TensorError;
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::ParamSet;
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
