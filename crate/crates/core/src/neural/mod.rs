//! Minimal deterministic neural-network engine.
//!
//! Everything is `f64` and single-threaded: a forward pass with identical
//! inputs and parameters is bit-identical across runs. Supported layers are
//! valid 2-D convolution (stride 1), dense, ReLU, sigmoid, softmax and
//! flatten, each with an exact reverse-mode backward pass.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod network;
mod tensor;

pub use adam::{glorot_uniform, Adam, ModelParameters, Param};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, relu, sigmoid, softmax,
    softmax_backward,
};
pub use loss::{binary_cross_entropy, cross_entropy, log_softmax, Target, BCE_EPSILON};
pub use network::{ForwardCache, Gradients, Layer, Network};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor contains a non-finite value")]
    NonFinite,
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("backward called without a matching forward cache")]
    StaleCache,
    #[error("target class {index} out of range for {classes} classes")]
    InvalidTarget { index: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(context: &str, expected: &[usize], found: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        context: context.to_string(),
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}
