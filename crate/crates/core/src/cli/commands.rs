use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use super::formats::{decode_iq, encode_ppm, read_file, read_spt, write_file, write_spt};
use super::manifest::{DatasetConfig, DatasetManifest, ManifestRecord, MANIFEST_FILE};
use super::plots::{accuracy_vs_jnr_svg, confusion_svg};
use super::{CliError, Result};
use crate::dsp::{image_pipeline, SpectrogramImage, StftConfig};
use crate::gackan::{ArchConfig, FlopReport, GacKanModel};
use crate::nncore::{Mode, Module, Tensor};
use crate::sigsynth::{synth_sample, ComplexSignal, JammerClass, SampleSpec};
use crate::traineval::{
    argmax, evaluate, fit, Dataset, EpochRecord, Metrics, Split, Subset, TrainConfig, TrainError,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Reads a flat JSON document and lays its keys over `base`, so a config file
/// only needs the fields it changes.
pub fn overlay_config<T: Serialize + DeserializeOwned>(base: &T, path: &Path) -> Result<T> {
    let json_err = |source| CliError::Json {
        path: path.display().to_string(),
        source,
    };
    let bytes = read_file(path)?;
    let patch: serde_json::Value = serde_json::from_slice(&bytes).map_err(json_err)?;
    let serde_json::Value::Object(patch) = patch else {
        return Err(CliError::Validation(format!(
            "{} must hold a JSON object",
            path.display()
        )));
    };
    let mut merged = serde_json::to_value(base).map_err(json_err)?;
    if let serde_json::Value::Object(m) = &mut merged {
        for (k, v) in patch {
            if !m.contains_key(&k) {
                return Err(CliError::Validation(format!(
                    "unknown key {k:?} in {}",
                    path.display()
                )));
            }
            m.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(json_err)
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

/// Appends `suffix` to the full file name: `a/model.gkpt` → `a/model.gkpt.history.json`.
pub fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct GenOptions {
    pub config: DatasetConfig,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; output does not depend on it.
    pub parallel: usize,
    pub export_ppm: bool,
}

fn render_sample(rec: &ManifestRecord, cfg: &DatasetConfig) -> Result<SpectrogramImage> {
    let spec = SampleSpec {
        class: rec.class,
        jnr_db: rec.jnr_db,
        seed: rec.seed,
    };
    let sig = synth_sample(&spec, &cfg.sim)?;
    Ok(image_pipeline(&sig, &cfg.stft)?)
}

fn write_sample(rec: &ManifestRecord, opts: &GenOptions) -> Result<()> {
    let run = || -> Result<()> {
        let img = render_sample(rec, &opts.config)?;
        write_spt(&opts.out.join(&rec.path), &img)?;
        if opts.export_ppm {
            let ppm = Path::new("ppm").join(Path::new(&rec.path).with_extension("ppm"));
            write_file(&opts.out.join(ppm), &encode_ppm(&img))?;
        }
        Ok(())
    };
    run().map_err(|e| CliError::Sample {
        id: rec.id.clone(),
        source: Box::new(e),
    })
}

/// Synthesizes, images and writes every sample of the plan, then the
/// manifest. Samples are independent, so worker count never changes output.
pub fn gen_dataset(opts: &GenOptions) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::plan(&opts.config, opts.seed)?;
    let workers = opts.parallel.clamp(1, manifest.records.len().max(1));
    log::info!(
        "generating {} samples into {} with {workers} worker(s)",
        manifest.records.len(),
        opts.out.display()
    );
    let first_err: Mutex<Option<(usize, CliError)>> = Mutex::new(None);
    std::thread::scope(|s| {
        for w in 0..workers {
            let (records, first_err) = (&manifest.records, &first_err);
            s.spawn(move || {
                for i in (w..records.len()).step_by(workers) {
                    if let Err(e) = write_sample(&records[i], opts) {
                        let mut slot = first_err.lock().expect("error slot");
                        if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                            *slot = Some((i, e));
                        }
                        return;
                    }
                }
            });
        }
    });
    if let Some((_, e)) = first_err.into_inner().expect("error slot") {
        return Err(e);
    }
    write_file(&opts.out.join(MANIFEST_FILE), &manifest.to_json())?;
    Ok(manifest)
}

/// Dataset backed by a generated directory. Images are read from disk on
/// demand unless preloaded.
pub struct DiskDataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    shape: [usize; 3],
    cache: Option<Vec<f32>>,
}

impl DiskDataset {
    /// Loads and validates the manifest and checks the first sample's shape.
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(root)?;
        manifest.validate(Some(root))?;
        let first = manifest
            .records
            .first()
            .ok_or_else(|| CliError::Validation("manifest has no records".into()))?;
        let img = read_spt(&root.join(&first.path))?;
        let stft = &manifest.config.stft;
        if (img.height, img.width) != (stft.out_height, stft.out_width) {
            return Err(CliError::Validation(format!(
                "sample {} is {}×{}, manifest declares {}×{}",
                first.id, img.height, img.width, stft.out_height, stft.out_width
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            shape: img.shape(),
            manifest,
            cache: None,
        })
    }

    fn per_sample(&self) -> usize {
        self.shape.iter().product()
    }

    /// Bytes needed to hold every image in memory.
    pub fn footprint_bytes(&self) -> usize {
        4 * self.per_sample() * self.manifest.records.len()
    }

    /// Reads every image into memory.
    pub fn preload(&mut self) -> Result<()> {
        let per = self.per_sample();
        let mut buf = vec![0f32; per * self.manifest.records.len()];
        for (i, chunk) in buf.chunks_mut(per).enumerate() {
            self.read_into(i, chunk)?;
        }
        self.cache = Some(buf);
        Ok(())
    }

    fn read_into(&self, i: usize, out: &mut [f32]) -> Result<()> {
        let rec = &self.manifest.records[i];
        let img = read_spt(&self.root.join(&rec.path))?;
        if img.shape() != self.shape {
            return Err(CliError::Validation(format!(
                "sample {} has shape {:?}, expected {:?}",
                rec.id,
                img.shape(),
                self.shape
            )));
        }
        out.copy_from_slice(&img.pixels);
        Ok(())
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.manifest.indices(split)
    }
}

impl Dataset for DiskDataset {
    fn len(&self) -> usize {
        self.manifest.records.len()
    }

    fn label(&self, i: usize) -> usize {
        self.manifest.records[i].class_code as usize
    }

    fn jnr_db(&self, i: usize) -> f64 {
        self.manifest.records[i].jnr_db
    }

    fn load_into(&self, i: usize, out: &mut [f32]) -> crate::traineval::Result<()> {
        match &self.cache {
            Some(buf) => {
                let per = self.per_sample();
                out.copy_from_slice(&buf[i * per..(i + 1) * per]);
                Ok(())
            }
            None => self
                .read_into(i, out)
                .map_err(|e| TrainError::Data(e.to_string())),
        }
    }

    fn image_shape(&self) -> [usize; 3] {
        self.shape
    }
}

/// In-memory budget below which training preloads the whole dataset.
pub const PRELOAD_LIMIT_BYTES: usize = 4 << 30;

/// Picks the architecture for an image size: the small profile for 64×64,
/// otherwise the reference widths at that size.
pub fn default_arch(image_size: usize) -> ArchConfig {
    let desk = ArchConfig::desk();
    if image_size == desk.input_size {
        desk
    } else {
        ArchConfig {
            input_size: image_size,
            ..ArchConfig::reference()
        }
    }
}

fn check_compatible(arch: &ArchConfig, data: &DiskDataset) -> Result<()> {
    arch.validate()?;
    if arch.num_classes != JammerClass::COUNT {
        return Err(CliError::Validation(format!(
            "model has {} classes, dataset has {}",
            arch.num_classes,
            JammerClass::COUNT
        )));
    }
    let [c, h, w] = data.image_shape();
    if (c, h, w) != (arch.in_channels, arch.input_size, arch.input_size) {
        return Err(CliError::Validation(format!(
            "model expects {}×{}×{} inputs, dataset holds {c}×{h}×{w}",
            arch.in_channels, arch.input_size, arch.input_size
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: TrainConfig,
    pub arch: Option<ArchConfig>,
}

/// Training history written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub arch: ArchConfig,
    pub train_config: TrainConfig,
    pub dataset_config: DatasetConfig,
    pub dataset_seed: u64,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
}

/// Validates the dataset against the model, trains, and writes the
/// best-validation checkpoint plus `<out>.history.json`.
pub fn train(opts: &TrainOptions) -> Result<TrainHistory> {
    opts.config.validate()?;
    let mut data = DiskDataset::open(&opts.data)?;
    let arch = opts
        .arch
        .clone()
        .unwrap_or_else(|| default_arch(data.image_shape()[1]));
    check_compatible(&arch, &data)?;
    let (train_idx, val_idx) = (data.split_indices(Split::Train), data.split_indices(Split::Val));
    if train_idx.len() < 2 || val_idx.is_empty() {
        return Err(CliError::Validation(format!(
            "need at least 2 training and 1 validation sample, got {} and {}",
            train_idx.len(),
            val_idx.len()
        )));
    }
    if data.footprint_bytes() <= PRELOAD_LIMIT_BYTES {
        data.preload()?;
    }
    let mut model = GacKanModel::<f32>::new(arch.clone(), opts.config.seed)?;
    let train_set = Subset {
        inner: &data,
        indices: &train_idx,
    };
    let val_set = Subset {
        inner: &data,
        indices: &val_idx,
    };
    let outcome = fit(&mut model, &train_set, &val_set, &opts.config)?;
    let meta = CheckpointMeta {
        train_config: Some(opts.config.clone()),
        pipeline: Some(data.manifest.config.stft.clone()),
        sample_rate_hz: Some(data.manifest.config.sim.sample_rate_hz),
        epoch: Some(outcome.best_epoch),
        val_accuracy: Some(outcome.best_val_accuracy),
    };
    save_checkpoint(&opts.out, &model, &meta)?;
    let history = TrainHistory {
        arch,
        train_config: opts.config.clone(),
        dataset_config: data.manifest.config.clone(),
        dataset_seed: data.manifest.dataset_seed,
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        epochs: outcome.history,
    };
    write_file(&sibling_path(&opts.out, ".history.json"), &to_json_bytes(&history))?;
    Ok(history)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub report: PathBuf,
    pub split: Split,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub split: Split,
    pub fused: bool,
    pub class_names: Vec<String>,
    pub dataset_config: DatasetConfig,
    pub dataset_seed: u64,
    pub metrics: Metrics,
}

/// Evaluates a checkpoint on one split and writes the JSON report plus two
/// SVG figures next to it.
pub fn eval(opts: &EvalOptions) -> Result<EvalReport> {
    let (mut model, header) = load_checkpoint(&opts.ckpt)?;
    let data = DiskDataset::open(&opts.data)?;
    check_compatible(&header.arch, &data)?;
    let idx = data.split_indices(opts.split);
    let subset = Subset {
        inner: &data,
        indices: &idx,
    };
    let metrics = evaluate(&mut model, &subset, opts.batch_size)?;
    let names: Vec<&str> = JammerClass::ALL.iter().map(|c| c.name()).collect();
    let report = EvalReport {
        checkpoint: opts.ckpt.display().to_string(),
        split: opts.split,
        fused: header.fused,
        class_names: names.iter().map(|s| s.to_string()).collect(),
        dataset_config: data.manifest.config.clone(),
        dataset_seed: data.manifest.dataset_seed,
        metrics,
    };
    write_file(&opts.report, &to_json_bytes(&report))?;
    let stem = opts.report.with_extension("");
    write_file(
        &sibling_path(&stem, ".accuracy_vs_jnr.svg"),
        accuracy_vs_jnr_svg(&report.metrics).as_bytes(),
    )?;
    write_file(
        &sibling_path(&stem, ".confusion.svg"),
        confusion_svg(&report.metrics, &names).as_bytes(),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuseSummary {
    pub already_fused: bool,
    pub params_before: usize,
    pub params_after: usize,
}

/// Folds every asymmetric block into single kernels. A fused input is copied
/// through unchanged with a warning.
pub fn fuse(ckpt: &Path, out: &Path) -> Result<FuseSummary> {
    let (mut model, header) = load_checkpoint(ckpt)?;
    let params_before = model.count_params();
    let already_fused = model.is_fused();
    if already_fused {
        log::warn!("{} is already fused; writing it unchanged", ckpt.display());
    } else {
        model.fuse()?;
    }
    save_checkpoint(out, &model, &header.meta())?;
    Ok(FuseSummary {
        already_fused,
        params_before,
        params_after: model.count_params(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub arch: ArchConfig,
    pub fused: bool,
    pub params: usize,
    pub input_hw: (usize, usize),
    pub flops: FlopReport,
}

pub fn complexity_of(model: &GacKanModel<f32>) -> ComplexityReport {
    let hw = (model.arch.input_size, model.arch.input_size);
    ComplexityReport {
        arch: model.arch.clone(),
        fused: model.is_fused(),
        params: model.count_params(),
        input_hw: hw,
        flops: model.count_flops(hw),
    }
}

/// Parameter and FLOP counts of a checkpoint.
pub fn report(ckpt: &Path) -> Result<ComplexityReport> {
    let (model, _) = load_checkpoint(ckpt)?;
    Ok(complexity_of(&model))
}

/// Parameter and FLOP counts of a freshly built architecture.
pub fn report_arch(arch: &ArchConfig) -> Result<ComplexityReport> {
    Ok(complexity_of(&GacKanModel::<f32>::new(arch.clone(), 0)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Iq,
    Spt,
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub ckpt: PathBuf,
    pub input: PathBuf,
    pub format: InputFormat,
    /// Sample rate of an I/Q input; defaults to the rate stored in the checkpoint.
    pub sample_rate_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: JammerClass,
    pub code: u8,
    pub probabilities: Vec<f64>,
    pub logits: Vec<f32>,
}

/// Numerically stable softmax in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
    let e: Vec<f64> = logits.iter().map(|&z| (z as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Eval-mode class prediction for one image.
pub fn classify(model: &mut GacKanModel<f32>, img: &SpectrogramImage) -> Result<Prediction> {
    let a = &model.arch;
    if img.shape() != [a.in_channels, a.input_size, a.input_size] {
        return Err(CliError::Validation(format!(
            "input image {:?} does not match the model's {}×{}×{}",
            img.shape(),
            a.in_channels,
            a.input_size,
            a.input_size
        )));
    }
    let x = Tensor::from_vec(&[1, SpectrogramImage::CHANNELS, img.height, img.width], img.pixels.clone())?;
    let logits = model.forward(&x, Mode::Eval)?.into_data();
    let code = argmax(&logits);
    let class = JammerClass::from_code(code as u8).ok_or_else(|| {
        CliError::Validation(format!("model predicted class {code} outside the class set"))
    })?;
    Ok(Prediction {
        class,
        code: code as u8,
        probabilities: softmax(&logits),
        logits,
    })
}

/// Images raw I/Q with the checkpoint's pipeline.
pub fn image_from_iq(bytes: &[u8], pipeline: &StftConfig, sample_rate_hz: f64) -> Result<SpectrogramImage> {
    let samples = decode_iq(bytes)?;
    Ok(image_pipeline(&ComplexSignal::new(samples, sample_rate_hz), pipeline)?)
}

pub fn infer(opts: &InferOptions) -> Result<Prediction> {
    let (mut model, header) = load_checkpoint(&opts.ckpt)?;
    let img = match opts.format {
        InputFormat::Spt => read_spt(&opts.input)?,
        InputFormat::Iq => {
            let pipeline = header.pipeline.as_ref().ok_or_else(|| {
                CliError::Validation("checkpoint carries no imaging settings for I/Q input".into())
            })?;
            let fs = opts
                .sample_rate_hz
                .or(header.sample_rate_hz)
                .ok_or_else(|| CliError::Validation("I/Q input needs a sample rate".into()))?;
            image_from_iq(&read_file(&opts.input)?, pipeline, fs)
                .map_err(|e| e.with_path(&opts.input))?
        }
    };
    classify(&mut model, &img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 0.0, -3.5, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.999);
    }

    #[test]
    fn sibling_keeps_full_name() {
        assert_eq!(
            sibling_path(Path::new("a/m.gkpt"), ".history.json"),
            PathBuf::from("a/m.gkpt.history.json")
        );
    }

    #[test]
    fn overlay_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"epochs": 3, "base_lr": 0}"#).unwrap();
        let cfg = overlay_config(&TrainConfig::desk(), &p).unwrap();
        assert_eq!((cfg.epochs, cfg.base_lr, cfg.batch_size), (3, 0.0, 32));
        std::fs::write(&p, r#"{"epoch": 3}"#).unwrap();
        assert!(matches!(overlay_config(&TrainConfig::desk(), &p), Err(CliError::Validation(_))));
    }

    #[test]
    fn default_arch_follows_image_size() {
        assert_eq!(default_arch(64), ArchConfig::desk());
        assert_eq!(default_arch(224), ArchConfig::reference());
        assert_eq!(default_arch(96).block_channels, ArchConfig::reference().block_channels);
    }
}
