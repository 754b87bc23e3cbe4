//! Dataset splitting, mixup with label-smoothed cross-entropy, the training
//! loop with best-validation selection, and evaluation metrics.

mod fit;
mod loss;
mod metrics;
mod split;

pub use fit::{
    evaluate, fit, parameter_names, predict, Dataset, EpochRecord, LabeledSample, ModelState,
    Subset, TrainConfig, TrainOutcome,
};
pub use loss::{mix_with, mixup, smooth_ce, smooth_ce_row, total_loss, weighted_smooth_ce, LossParts, MixupBatch};
pub use metrics::{argmax, JnrAccuracy, Metrics};
pub use split::{split_dataset, Split, SplitIndices};

use crate::gackan::GacError;
use crate::nncore::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}, lr {lr:e}")]
    NonFinite { epoch: usize, batch: usize, lr: f64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] GacError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;
