//! Reverse-mode differentiation core, optimizer, and checkpoints.

mod checkpoint;
mod gemm;
mod graph;
mod optim;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, restore_into, save_checkpoint, CheckpointEntry, CheckpointHeader};
pub use graph::{DiffNode, Graph, Var, LOG_FLOOR};
pub use optim::{clip_grad_global_norm, global_grad_norm, AdamConfig, AdamState, StepReport};
pub use params::{Param, ParamId, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: index {index} out of range for axis of length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{len} values do not fill shape {shape:?}")]
    ValueLength { shape: Vec<usize>, len: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
