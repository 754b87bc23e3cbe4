use super::{CliError, Result};
use crate::dsp::StftConfig;
use crate::sigsynth::rng::sample_seed;
use crate::sigsynth::{JammerClass, SimConfig};
use crate::traineval::{split_dataset, Split};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Simulation, imaging and split settings of a dataset, as one flat document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub sim: SimConfig,
    #[serde(flatten)]
    pub stft: StftConfig,
    #[serde(default = "default_ratios")]
    pub split_ratios: [f64; 3],
}

fn default_ratios() -> [f64; 3] {
    [0.70, 0.15, 0.15]
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            stft: StftConfig::default(),
            split_ratios: default_ratios(),
        }
    }
}

impl DatasetConfig {
    /// 2 MHz, 2000 samples, JNR {0, 5, 10} dB × 60 trials, 64×64 images.
    pub fn desk() -> Self {
        Self {
            sim: SimConfig::desk(),
            stft: StftConfig::desk(),
            split_ratios: default_ratios(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.stft.validate()?;
        if self.stft.window_len > self.sim.num_samples() {
            return Err(CliError::Validation(format!(
                "STFT window {} longer than the {}-sample observation",
                self.stft.window_len,
                self.sim.num_samples()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub class: JammerClass,
    pub class_code: u8,
    pub jnr_db: f64,
    pub seed: u64,
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub dataset_seed: u64,
    pub config: DatasetConfig,
    pub stratified: bool,
    pub records: Vec<ManifestRecord>,
}

pub fn sample_id(class: JammerClass, jnr_index: usize, trial: usize) -> String {
    format!("{}_j{jnr_index:02}_t{trial:04}", class.name().to_lowercase())
}

impl DatasetManifest {
    /// Every (class, JNR, trial) record in canonical order with its split,
    /// without synthesizing anything.
    pub fn plan(config: &DatasetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut records = Vec::new();
        for class in JammerClass::ALL {
            for (ji, &jnr) in config.sim.jnr_grid_db.iter().enumerate() {
                for trial in 0..config.sim.trials_per_cell {
                    let id = sample_id(class, ji, trial);
                    records.push(ManifestRecord {
                        path: format!("samples/{}/{id}.spt", class.name().to_lowercase()),
                        id,
                        class,
                        class_code: class.code(),
                        jnr_db: jnr,
                        seed: sample_seed(seed, class.code(), ji, trial),
                        split: Split::Train,
                    });
                }
            }
        }
        let cells: Vec<_> = records.iter().map(|r| (r.class, r.jnr_db)).collect();
        let split = split_dataset(&cells, config.split_ratios, seed)?;
        for (r, s) in records.iter_mut().zip(split.assignment(cells.len())) {
            r.split = s.expect("split covers every record");
        }
        Ok(Self {
            format_version: MANIFEST_VERSION,
            dataset_seed: seed,
            config: config.clone(),
            stratified: split.stratified,
            records,
        })
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let count = |s: Split| self.records.iter().filter(|r| r.split == s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    /// Checks counts per cell, id uniqueness, class codes and, given a root,
    /// that every sample file exists.
    pub fn validate(&self, root: Option<&Path>) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(CliError::Validation(format!("unsupported manifest version {}", self.format_version)));
        }
        let mut ids = HashSet::new();
        let mut cells: BTreeMap<(u8, u64), usize> = BTreeMap::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(CliError::Validation(format!("duplicate sample id {}", r.id)));
            }
            if r.class.code() != r.class_code {
                return Err(CliError::Validation(format!("sample {} has class code {} for {}", r.id, r.class_code, r.class)));
            }
            *cells.entry((r.class_code, r.jnr_db.to_bits())).or_default() += 1;
            if let Some(root) = root {
                if !root.join(&r.path).is_file() {
                    return Err(CliError::Validation(format!("sample file {} missing", r.path)));
                }
            }
        }
        let want_cells = JammerClass::COUNT * self.config.sim.jnr_grid_db.len();
        if cells.len() != want_cells {
            return Err(CliError::Validation(format!("{} (class, JNR) cells, expected {want_cells}", cells.len())));
        }
        if let Some(((c, j), n)) = cells.iter().find(|(_, &n)| n != self.config.sim.trials_per_cell) {
            return Err(CliError::Validation(format!(
                "cell (class {c}, {} dB) holds {n} samples, expected {}",
                f64::from_bits(*j),
                self.config.sim.trials_per_cell
            )));
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = super::formats::read_file(&path)?;
        serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }
}
