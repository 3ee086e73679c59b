//! Offline pipeline that produces the tuning model: labeled rollouts, a
//! training corpus, cross-validated training and file export.

mod corpus;
mod io;
mod mtune;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::nn::NnError;
use crate::protocol::ProtocolError;
use crate::tuner::TunerError;

pub use corpus::{
    generate_corpus, label_rollout, read_corpus, rollout_score, tau_label, write_corpus, CorpusConfig, LabeledSample,
    RolloutScore,
};
pub use io::{decode_mtune, encode_mtune, export_mtune, import_mtune, SCALER_FORMAT_VERSION};
pub use mtune::{train_mtune, CvReport, MtuneTrainConfig};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("config {config}: {source}")]
    Rollout {
        config: usize,
        #[source]
        source: Box<ProtocolError>,
    },
    #[error("corpus has {samples} samples but {folds} folds were requested")]
    CorpusTooSmall { samples: usize, folds: usize },
    #[error("non-finite training loss in fold {fold} at epoch {epoch}")]
    NonFiniteLoss { fold: usize, epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corpus line {line}: {message}")]
    CorpusFormat { line: usize, message: String },
    #[error("tuning model file: {0}")]
    Format(String),
    #[error("tuning model format version {found}, expected {expected}")]
    Version { expected: u32, found: u32 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
