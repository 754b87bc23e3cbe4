use super::formats::{read_file, write_file};
use super::{CliError, Result};
use crate::dsp::StftConfig;
use crate::gackan::{ArchConfig, GacKanModel};
use crate::nncore::{Module, StateKind};
use crate::traineval::TrainConfig;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch: ArchConfig,
    pub train_config: Option<TrainConfig>,
    /// Imaging settings of the training data, used to run raw signals.
    pub pipeline: Option<StftConfig>,
    pub sample_rate_hz: Option<f64>,
    pub epoch: Option<usize>,
    pub val_accuracy: Option<f64>,
    pub fused: bool,
    pub tensors: Vec<TensorEntry>,
}

/// Training provenance stored alongside the tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub train_config: Option<TrainConfig>,
    pub pipeline: Option<StftConfig>,
    pub sample_rate_hz: Option<f64>,
    pub epoch: Option<usize>,
    pub val_accuracy: Option<f64>,
}

impl CheckpointHeader {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            train_config: self.train_config.clone(),
            pipeline: self.pipeline.clone(),
            sample_rate_hz: self.sample_rate_hz,
            epoch: self.epoch,
            val_accuracy: self.val_accuracy,
        }
    }
}

/// `GKPT`, u32 header length, JSON header, then every tensor as little-endian
/// `f32` in visiting order.
pub fn encode_checkpoint(model: &GacKanModel<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    model.visit("", &mut |name, kind, t| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            role: match kind {
                StateKind::Param => TensorRole::Param,
                StateKind::Buffer => TensorRole::Buffer,
            },
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        arch: model.arch.clone(),
        train_config: meta.train_config.clone(),
        pipeline: meta.pipeline.clone(),
        sample_rate_hz: meta.sample_rate_hz,
        epoch: meta.epoch,
        val_accuracy: meta.val_accuracy,
        fused: model.is_fused(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> CliError {
    CliError::Format {
        what: "checkpoint".into(),
        offset,
        message: message.into(),
    }
}

/// Rebuilds the model described by the header and fills every tensor.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(GacKanModel<f32>, CheckpointHeader)> {
    if bytes.len() < 8 {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = 8 + hlen;
    if bytes.len() < body {
        return Err(format_err(bytes.len(), format!("header declares {hlen} bytes")));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[8..body]).map_err(|e| format_err(8 + e.column(), format!("header JSON: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(format_err(8, format!("unsupported version {}", header.format_version)));
    }
    let payload = &bytes[body..];
    let mut model = GacKanModel::<f32>::new(header.arch.clone(), 0)?;
    if header.fused {
        model.fuse()?;
    }
    let mut entries: HashMap<&str, &TensorEntry> = HashMap::new();
    for e in &header.tensors {
        if entries.insert(&e.name, e).is_some() {
            return Err(format_err(8, format!("tensor {} listed twice", e.name)));
        }
    }
    let mut err = None;
    let mut used = 0;
    model.visit_mut("", &mut |name, _, t| {
        if err.is_some() {
            return;
        }
        let Some(e) = entries.get(name) else {
            err = Some(format_err(8, format!("tensor {name} missing")));
            return;
        };
        if e.shape != t.shape() {
            err = Some(format_err(8, format!("tensor {name} has shape {:?}, model expects {:?}", e.shape, t.shape())));
            return;
        }
        let end = e.offset + 4 * t.numel();
        if end > payload.len() {
            err = Some(format_err(body + payload.len(), format!("payload ends inside tensor {name}")));
            return;
        }
        for (v, c) in t.data_mut().iter_mut().zip(payload[e.offset..end].chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        used += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if used != header.tensors.len() {
        return Err(format_err(8, format!("{} tensors stored, model uses {used}", header.tensors.len())));
    }
    Ok((model, header))
}

pub fn save_checkpoint(path: &Path, model: &GacKanModel<f32>, meta: &CheckpointMeta) -> Result<()> {
    write_file(path, &encode_checkpoint(model, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(GacKanModel<f32>, CheckpointHeader)> {
    decode_checkpoint(&read_file(path)?).map_err(|e| e.with_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traineval::ModelState;

    #[test]
    fn round_trip_is_bitwise() {
        let mut model = GacKanModel::<f32>::new(ArchConfig::desk(), 42).unwrap();
        model.feature_norm.running_var.data_mut()[3] = 0.123;
        let meta = CheckpointMeta { epoch: Some(4), val_accuracy: Some(0.5), ..Default::default() };
        let bytes = encode_checkpoint(&model, &meta);
        let (back, header) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ModelState::capture(&back), ModelState::capture(&model));
        assert_eq!(header.epoch, Some(4));
        assert!(!header.fused);
        assert_eq!(encode_checkpoint(&back, &header.meta()), bytes);
    }

    #[test]
    fn fused_round_trip() {
        let mut model = GacKanModel::<f32>::new(ArchConfig::desk(), 1).unwrap();
        model.fuse().unwrap();
        let bytes = encode_checkpoint(&model, &CheckpointMeta::default());
        let (back, header) = decode_checkpoint(&bytes).unwrap();
        assert!(header.fused && back.is_fused());
        assert_eq!(ModelState::capture(&back), ModelState::capture(&model));
    }

    #[test]
    fn truncation_is_reported() {
        let model = GacKanModel::<f32>::new(ArchConfig::desk(), 1).unwrap();
        let bytes = encode_checkpoint(&model, &CheckpointMeta::default());
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 4]), Err(CliError::Format { .. })));
        assert!(matches!(decode_checkpoint(b"NOPE0000"), Err(CliError::Format { offset: 0, .. })));
    }
}
