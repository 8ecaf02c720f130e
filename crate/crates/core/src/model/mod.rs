//! The heterogeneous graph attention surrogate network.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{build_inputs, forward, AblationFlags, ForwardOutput, GraphEncoding};
pub use params::{tensor_shapes, ModelConfig, ModelParams, ParamLayout, UpdateActivation};

use thiserror::Error;

use crate::autodiff::AdError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
