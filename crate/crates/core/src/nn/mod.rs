//! Layer graph with residual shortcuts, network builders, and weight files.

mod builders;
mod layer;
mod network;
mod weights;

use thiserror::Error;

use crate::tensor::TensorError;

pub use builders::{
    attach_transfer_head, build_imitation_resnet, build_resnet_backbone, build_resnet_family,
    resnet_stage_blocks, ModelSpec, NetInit, TransferHead, IMITATION_STAGE_CHANNELS,
};
pub use layer::{Layer, LayerKind, Mode, Param, ResidualBlock};
pub use network::{ForwardCache, Gradients, Network};
pub use weights::{
    load_weights, load_weights_file, save_weights, save_weights_file, FormatError, WEIGHT_MAGIC,
    WEIGHT_VERSION,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("composition error: {0}")]
    Composition(String),
    #[error("state error: {0}")]
    State(String),
    #[error("weight file: {0}")]
    Format(#[from] FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
