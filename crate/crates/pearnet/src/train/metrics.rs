//! Confusion counts, accuracy and F1 scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{NUM_CLASSES, STAGE_NAMES};

/// Rows are true classes, columns predictions.
pub type Confusion = [[u64; NUM_CLASSES]; NUM_CLASSES];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; NUM_CLASSES],
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(confusion: Confusion) -> Result<Self> {
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::invalid("no evaluated samples"));
        }
        let correct: u64 = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
        let mut per_class_f1 = [0.0; NUM_CLASSES];
        for (k, f1) in per_class_f1.iter_mut().enumerate() {
            let tp = confusion[k][k] as f64;
            let predicted: u64 = (0..NUM_CLASSES).map(|r| confusion[r][k]).sum();
            let actual: u64 = confusion[k].iter().sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
            *f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        }
        Ok(Self {
            total,
            accuracy: correct as f64 / total as f64,
            macro_f1: per_class_f1.iter().sum::<f64>() / NUM_CLASSES as f64,
            per_class_f1,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid("truth and predictions differ in length"));
        }
        let mut c = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t as usize >= NUM_CLASSES || p as usize >= NUM_CLASSES {
                return Err(Error::invalid(format!("class out of range: {t} / {p}")));
            }
            c[t as usize][p as usize] += 1;
        }
        Self::from_confusion(c)
    }
}

/// Pooled metrics plus the per-fold breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub pooled: Metrics,
    pub folds: Vec<Metrics>,
}

impl MetricsReport {
    /// Sums fold confusion matrices before computing the pooled scores.
    pub fn pool(folds: Vec<Metrics>) -> Result<Self> {
        let mut c = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for f in &folds {
            for (row, fold_row) in c.iter_mut().zip(&f.confusion) {
                for (v, x) in row.iter_mut().zip(fold_row) {
                    *v += x;
                }
            }
        }
        Ok(Self { pooled: Metrics::from_confusion(c)?, folds })
    }

    /// Aligned plain-text table: one row per fold, then the pooled row.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8}{:>6}{:>10}{:>8}", "fold", "n", "Accuracy", "MF1");
        for name in STAGE_NAMES {
            out.push_str(&format!("{name:>8}"));
        }
        out.push('\n');
        let row = |label: String, m: &Metrics| {
            let mut s = format!("{label:<8}{:>6}{:>10.4}{:>8.4}", m.total, m.accuracy, m.macro_f1);
            for f in m.per_class_f1 {
                s.push_str(&format!("{f:>8.4}"));
            }
            s.push('\n');
            s
        };
        for (i, f) in self.folds.iter().enumerate() {
            out.push_str(&row(i.to_string(), f));
        }
        out.push_str(&row("pooled".into(), &self.pooled));
        out
    }
}
