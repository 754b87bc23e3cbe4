//! On-disk formats, dataset manifests, checkpoints and the batch commands
//! behind the `gackan` binary.

mod checkpoint;
mod commands;
mod formats;
mod manifest;
mod plots;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader,
    CheckpointMeta, TensorEntry, TensorRole, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use commands::*;
pub use formats::{
    decode_iq, decode_spt, encode_iq, encode_ppm, encode_spt, read_spt, write_spt, SPT_HEADER_LEN,
    SPT_MAGIC, SPT_VERSION,
};
pub use manifest::{
    sample_id, DatasetConfig, DatasetManifest, ManifestRecord, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use plots::{accuracy_vs_jnr_svg, confusion_svg};

use crate::dsp::DspError;
use crate::gackan::GacError;
use crate::nncore::NnError;
use crate::sigsynth::SynthError;
use crate::traineval::TrainError;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("malformed {what} at byte {offset}: {message}")]
    Format {
        what: String,
        offset: usize,
        message: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<CliError>,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] GacError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl CliError {
    /// Attaches the file a format error came from.
    pub fn with_path(self, path: &Path) -> Self {
        match self {
            CliError::Format {
                what,
                offset,
                message,
            } => CliError::Format {
                what: format!("{what} ({})", path.display()),
                offset,
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
