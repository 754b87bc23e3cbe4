use super::{Result, TrainError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JnrAccuracy {
    pub jnr_db: f64,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

/// Classification metrics. `confusion[p][t]` counts samples of true class `t`
/// predicted as `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: u64,
    pub overall_accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub per_jnr: Vec<JnrAccuracy>,
}

impl Metrics {
    pub fn from_predictions(
        predictions: &[usize],
        labels: &[usize],
        jnrs: &[f64],
        num_classes: usize,
    ) -> Result<Self> {
        if predictions.is_empty() {
            return Err(TrainError::Data("cannot evaluate an empty set".into()));
        }
        if predictions.len() != labels.len() || labels.len() != jnrs.len() {
            return Err(TrainError::Data("predictions, labels and JNRs differ in length".into()));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        let mut bins: Vec<JnrAccuracy> = Vec::new();
        let mut correct = 0u64;
        for ((&p, &t), &j) in predictions.iter().zip(labels).zip(jnrs) {
            if p >= num_classes || t >= num_classes {
                return Err(TrainError::Data(format!("class index outside 0..{num_classes}")));
            }
            confusion[p][t] += 1;
            let hit = u64::from(p == t);
            correct += hit;
            let pos = bins.iter().position(|b| b.jnr_db.to_bits() == j.to_bits());
            let bin = match pos {
                Some(i) => &mut bins[i],
                None => {
                    bins.push(JnrAccuracy { jnr_db: j, correct: 0, total: 0, accuracy: 0.0 });
                    bins.last_mut().expect("just pushed")
                }
            };
            bin.correct += hit;
            bin.total += 1;
        }
        bins.sort_by(|a, b| a.jnr_db.total_cmp(&b.jnr_db));
        for b in &mut bins {
            b.accuracy = b.correct as f64 / b.total as f64;
        }
        let count = predictions.len() as u64;
        Ok(Self {
            count,
            overall_accuracy: correct as f64 / count as f64,
            confusion,
            per_jnr: bins,
        })
    }

    pub fn trace(&self) -> u64 {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Per true-class sample counts (column sums).
    pub fn class_totals(&self) -> Vec<u64> {
        let k = self.confusion.len();
        (0..k).map(|t| (0..k).map(|p| self.confusion[p][t]).sum()).collect()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_predictors() {
        let labels: Vec<usize> = (0..70).map(|i| i % 7).collect();
        let jnrs = vec![0.0; 70];
        let m = Metrics::from_predictions(&labels, &labels, &jnrs, 7).unwrap();
        assert_eq!(m.overall_accuracy, 1.0);
        assert_eq!(m.trace(), 70);
        let c = Metrics::from_predictions(&[0; 70], &labels, &jnrs, 7).unwrap();
        assert!((c.overall_accuracy - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(c.confusion[0], vec![10; 7]);
        assert_eq!(c.class_totals(), vec![10; 7]);
    }

    #[test]
    fn per_jnr_bins_sorted() {
        let m = Metrics::from_predictions(&[1, 0, 1], &[1, 1, 1], &[10.0, -5.0, -5.0], 2).unwrap();
        assert_eq!(m.per_jnr.len(), 2);
        assert_eq!(m.per_jnr[0].jnr_db, -5.0);
        assert_eq!(m.per_jnr[0].accuracy, 0.5);
        assert_eq!(m.per_jnr[1].accuracy, 1.0);
        assert!(Metrics::from_predictions(&[], &[], &[], 7).is_err());
    }

    #[test]
    fn argmax_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
