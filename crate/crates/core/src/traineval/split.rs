use super::{Result, TrainError};
use crate::sigsynth::rng::mix_seed;
use crate::sigsynth::JammerClass;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Index sets of a partition. `stratified` is false when some cell was too
/// small to give every split at least one sample and a global shuffle was used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub stratified: bool,
}

impl SplitIndices {
    pub fn assignment(&self, len: usize) -> Vec<Option<Split>> {
        let mut out = vec![None; len];
        for (set, tag) in [(&self.train, Split::Train), (&self.val, Split::Val), (&self.test, Split::Test)] {
            for &i in set {
                out[i] = Some(tag);
            }
        }
        out
    }
}

/// Sizes `round(r_train·n)`, `round(r_val·n)` and the remainder.
fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    let a = ((ratios[0] * n as f64).round() as usize).min(n);
    let b = ((ratios[1] * n as f64).round() as usize).min(n - a);
    (a, b, n - a - b)
}

/// Partitions samples keyed by `(class, jnr)` into train/val/test, stratified
/// per cell with a seeded shuffle.
pub fn split_dataset(cells: &[(JammerClass, f64)], ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut groups: BTreeMap<(u8, u64), Vec<usize>> = BTreeMap::new();
    for (i, (class, jnr)) in cells.iter().enumerate() {
        groups.entry((class.code(), jnr.to_bits())).or_default().push(i);
    }
    let all_fit = groups.values().all(|g| {
        let (a, b, c) = split_sizes(g.len(), ratios);
        (ratios[0] == 0.0 || a > 0) && (ratios[1] == 0.0 || b > 0) && (ratios[2] == 0.0 || c > 0)
    });
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        stratified: all_fit,
    };
    let mut take = |mut idx: Vec<usize>, rng_seed: u64| {
        idx.shuffle(&mut Pcg32::seed_from_u64(rng_seed));
        let (a, b, _) = split_sizes(idx.len(), ratios);
        out.train.extend_from_slice(&idx[..a]);
        out.val.extend_from_slice(&idx[a..a + b]);
        out.test.extend_from_slice(&idx[a + b..]);
    };
    if all_fit {
        for ((class, jnr), idx) in groups {
            take(idx, mix_seed(&[seed, class as u64, jnr]));
        }
    } else {
        log::warn!("a (class, JNR) cell is too small to stratify; using a global shuffle");
        take((0..cells.len()).collect(), mix_seed(&[seed, u64::MAX]));
    }
    Ok(out)
}
