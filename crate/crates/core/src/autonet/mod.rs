//! The toy two-branch segmentation/regression model: architecture, losses,
//! Adam with a cosine-annealed learning rate, and the training loop.

mod loss;
mod network;
mod optim;
mod train;

pub use loss::{dice_loss, mse_loss, DICE_SMOOTHING};
pub use network::{
    bias_name, build_toy_network, toy_layers, weight_name, Activation, Architecture, ConvInfo,
    ForwardCache, Head, Layer, Network,
};
pub use optim::{cosine_lr, AdamState};
pub use train::{train, EarlyStop, Sample, TrainConfig};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum AutonetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),
    #[error("invalid layer `{0}`")]
    InvalidLayer(String),
    #[error("layer `{layer}` expects {actual} input channels but receives {expected}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },
    #[error("skip connections are unbalanced")]
    UnbalancedSkips,
    #[error("forward cache does not belong to this network")]
    CacheMismatch,
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` has shape {actual:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("sample {index}: {reason}")]
    BadSample { index: usize, reason: String },
    #[error("epoch {epoch} outside schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("non-finite loss at epoch {0}")]
    NonFinite(usize),
}
