//! Evaluation metrics for both heads.
//!
//! Regression: MSE, MAE, RMSE, and R² (undefined for constant targets).
//! Classification: a 5x5 confusion matrix with per-class and
//! support-weighted precision/recall/F1. Support-weighted recall is computed
//! in its cancelled form `sum_k tp_k / n`, which is algebraically (and here
//! bit-for-bit) equal to accuracy.

use alloc::format;

use crate::error::{Error, Result};
use crate::losses::NUM_CLASSES;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when every target is identical, which leaves the score with
    /// zero variance to explain.
    pub r2: Option<f64>,
}

pub fn regression_metrics(pred: &[f64], target: &[f64]) -> Result<RegressionMetrics> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Contract(format!(
            "regression metrics over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.iter().chain(target).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite values in metrics input".into()));
    }
    let n = pred.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (p, t) in pred.iter().zip(target) {
        se += (p - t) * (p - t);
        ae += math::abs(p - t);
    }
    let mse = se / n;
    let mae = ae / n;
    let rmse = math::sqrt(mse);
    let r2 = if target.iter().all(|t| *t == target[0]) {
        None
    } else {
        let mean: f64 = target.iter().sum::<f64>() / n;
        let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
        Some(1.0 - se / ss_tot)
    };
    Ok(RegressionMetrics { mse, mae, rmse, r2 })
}

/// Index of the first maximal value; ties break toward the lower index, so
/// predictions are deterministic.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// `counts[true_class][predicted_class]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[usize; NUM_CLASSES]; NUM_CLASSES],
    total: usize,
}

impl ConfusionMatrix {
    pub fn from_pairs(truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.is_empty() || truth.len() != pred.len() {
            return Err(Error::Contract(format!(
                "confusion matrix over {} labels and {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut counts = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::Contract(format!(
                    "class pair ({t}, {p}) out of range"
                )));
            }
            counts[t][p] += 1;
        }
        Ok(Self {
            counts,
            total: truth.len(),
        })
    }

    pub fn count(&self, truth: usize, pred: usize) -> usize {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Number of samples whose true class is `k`.
    pub fn support(&self, k: usize) -> usize {
        self.counts[k].iter().sum()
    }

    /// Number of samples predicted as `k`.
    pub fn predicted(&self, k: usize) -> usize {
        self.counts.iter().map(|row| row[k]).sum()
    }

    pub fn true_positives(&self, k: usize) -> usize {
        self.counts[k][k]
    }

    pub fn accuracy(&self) -> f64 {
        let hits: usize = (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum();
        hits as f64 / self.total as f64
    }

    /// `tp / predicted`, zero when the class is never predicted.
    pub fn precision(&self, k: usize) -> f64 {
        match self.predicted(k) {
            0 => 0.0,
            p => self.true_positives(k) as f64 / p as f64,
        }
    }

    /// `tp / support`, zero when the class never occurs.
    pub fn recall(&self, k: usize) -> f64 {
        match self.support(k) {
            0 => 0.0,
            s => self.true_positives(k) as f64 / s as f64,
        }
    }

    pub fn f1(&self, k: usize) -> f64 {
        let (p, r) = (self.precision(k), self.recall(k));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn weighted_precision(&self) -> f64 {
        self.weighted_by_support(|k| self.precision(k))
    }

    /// Support-weighted recall. The support factors cancel
    /// (`sum_k (s_k/n)(tp_k/s_k) = sum_k tp_k / n`), so this is computed as,
    /// and exactly equals, accuracy.
    pub fn weighted_recall(&self) -> f64 {
        self.accuracy()
    }

    pub fn weighted_f1(&self) -> f64 {
        self.weighted_by_support(|k| self.f1(k))
    }

    fn weighted_by_support(&self, score: impl Fn(usize) -> f64) -> f64 {
        (0..NUM_CLASSES)
            .map(|k| self.support(k) as f64 * score(k))
            .sum::<f64>()
            / self.total as f64
    }
}
