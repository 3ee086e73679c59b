//! Dense feed-forward networks with exact backpropagation, optimizers,
//! evaluation metrics and inverse-loss weighted model merging.
//!
//! Everything here is a pure function of its inputs. Networks are flat
//! `f64` parameter vectors plus a layer chain, which is also the unit that
//! gossip nodes exchange and merge.

mod io;
mod merge;
mod metrics;
mod network;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    decode_network, encode_network_binary, encode_network_json, read_network, write_network, ModelFile, ModelFormat,
    MODEL_FORMAT_VERSION,
};
pub use merge::{dfed_pow_weights, merge_models, LOSS_EPSILON};
pub use metrics::{evaluate, EvalMetrics};
pub use network::{
    argmax, init_network, softmax_in_place, validate_layers, Activation, DenseNetwork, LayerSpec, PROB_FLOOR,
};
pub use train::{train_epochs, OptimizerConfig, OptimizerKind, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Label {
    /// Class index for classification.
    Class(usize),
    /// Dense target vector (regression, or soft class targets).
    Target(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl Sample {
    pub fn class(features: Vec<f64>, class: usize) -> Self {
        Self { features, label: Label::Class(class) }
    }

    pub fn target(features: Vec<f64>, target: Vec<f64>) -> Self {
        Self { features, label: Label::Target(target) }
    }
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("layer {layer} has a zero dimension")]
    ZeroWidth { layer: usize },
    #[error("layer {layer} expects input width {expected} but was given {found}")]
    LayerMismatch { layer: usize, expected: usize, found: usize },
    #[error("softmax is only allowed on the final layer (found on layer {layer})")]
    SoftmaxNotFinal { layer: usize },
    #[error("expected {expected} parameters, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("input has length {found}, network expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("cross-entropy loss requires a softmax output layer")]
    LossActivation,
    #[error("models do not share the same layer specification")]
    SpecMismatch,
    #[error("merge weights must sum to 1 (got {0})")]
    WeightSum(f64),
    #[error("{models} models but {weights} weights")]
    WeightCount { models: usize, weights: usize },
    #[error("invalid optimizer configuration: {0}")]
    InvalidOptimizer(String),
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
