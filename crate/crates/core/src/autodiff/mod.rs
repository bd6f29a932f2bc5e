//! Dense-tensor reverse-mode differentiation with the layers, optimizer and
//! checkpointing the radiance field needs.

mod adam;
mod checkpoint;
mod clip;
mod fpenv;
mod mlp;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use clip::{clip_gradients, clip_gradients_in_place, global_norm};
pub use fpenv::FlushDenormals;
pub use mlp::{Activation, Linear, LinearVars, MlpParams};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("backward needs a single-element root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("gradient {index} contains a non-finite value")]
    NonFiniteGradient { index: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
