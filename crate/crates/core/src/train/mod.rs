//! Optimizers, the training loop, evaluation metrics and checkpoints.

use thiserror::Error;

use crate::data::DataError;
use crate::nn::NetError;
use crate::tensor::TensorError;

mod checkpoint;
mod dataset;
mod metrics;
mod optim;
mod trainer;

pub use checkpoint::{checkpoint, read_meta, resume, resume_into, sidecar_path, CheckpointMeta};
pub use dataset::{preprocess, Dataset, PipelineConfig, DEFAULT_RESOLUTION};
pub use metrics::{
    evaluate, predict_classes, ConfusionMatrix, DegenerateFlags, MetricsReport, EVAL_BATCH,
};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState, Optimizer, OptimizerKind};
pub use trainer::{train, EpochStats, TrainConfig, TrainHistory, Trainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint metadata: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Net(NetError::Tensor(e))
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
