//! Confusion matrices and support-weighted classification metrics.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `K x K` counts, rows = actual class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Metrics("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.classes + predicted]
    }

    pub fn add(&mut self, actual: usize, predicted: usize) {
        self.counts[actual * self.classes + predicted] += 1;
    }

    pub fn row_sum(&self, actual: usize) -> u64 {
        (0..self.classes).map(|p| self.get(actual, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|a| self.get(a, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.classes.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }
}

pub fn confusion(actual: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::Metrics(format!(
            "label count mismatch: {} actual vs {} predicted",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Metrics("no labels".into()));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (i, (&a, &p)) in actual.iter().zip(predicted).enumerate() {
        if a >= classes || p >= classes {
            return Err(Error::Metrics(format!(
                "pair {i} ({a}, {p}) has a label outside 0..{classes}"
            )));
        }
        cm.add(a, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<S> {
    pub precision: S,
    pub recall: S,
    pub f1: S,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<S> {
    pub accuracy: S,
    pub weighted_precision: S,
    pub weighted_recall: S,
    pub weighted_f1: S,
    pub per_class: Vec<ClassMetrics<S>>,
    pub warnings: Vec<String>,
}

fn ratio<S: Scalar>(num: u64, den: u64) -> Option<S> {
    (den > 0).then(|| S::of(num as f64) / S::of(den as f64))
}

/// Accuracy `trace / total` and per-class metrics averaged with weights `n_i / n`.
/// A zero denominator contributes 0 and adds a warning.
pub fn compute_metrics<S: Scalar>(cm: &ConfusionMatrix) -> Result<MetricsReport<S>> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Metrics("empty confusion matrix".into()));
    }
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(cm.classes());
    let (mut wp, mut wr, mut wf) = (S::zero(), S::zero(), S::zero());
    for i in 0..cm.classes() {
        let tp = cm.get(i, i);
        let support = cm.row_sum(i);
        let precision = ratio(tp, cm.col_sum(i)).unwrap_or_else(|| {
            warnings.push(format!("class {i}: no predictions, precision set to 0"));
            S::zero()
        });
        let recall = ratio(tp, support).unwrap_or_else(|| {
            warnings.push(format!("class {i}: no support, recall set to 0"));
            S::zero()
        });
        let f1 = if precision + recall > S::zero() {
            S::of(2.0) * precision * recall / (precision + recall)
        } else {
            S::zero()
        };
        let w = S::of(support as f64) / S::of(n as f64);
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(MetricsReport {
        accuracy: S::of(cm.trace() as f64) / S::of(n as f64),
        weighted_precision: wp,
        weighted_recall: wr,
        weighted_f1: wf,
        per_class,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_swapped() {
        let id = ConfusionMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        let r: MetricsReport<f64> = compute_metrics(&id).unwrap();
        assert_eq!(
            (
                r.accuracy,
                r.weighted_precision,
                r.weighted_recall,
                r.weighted_f1
            ),
            (1.0, 1.0, 1.0, 1.0)
        );
        let swap = ConfusionMatrix::from_rows(&[vec![0, 1], vec![1, 0]]).unwrap();
        let r: MetricsReport<f32> = compute_metrics(&swap).unwrap();
        assert_eq!((r.accuracy, r.weighted_f1), (0.0, 0.0));
    }

    #[test]
    fn confusion_shapes() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(cm.trace(), 3);
        let cm = confusion(&[0, 1, 2, 1], &[0, 0, 0, 0], 3).unwrap();
        assert_eq!(cm.col_sum(0), 4);
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[5], &[0], 2).is_err());
    }

    #[test]
    fn zero_column_warns() {
        let cm = ConfusionMatrix::from_rows(&[vec![2, 0], vec![3, 0]]).unwrap();
        let r: MetricsReport<f64> = compute_metrics(&cm).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert!(!r.warnings.is_empty());
        assert!(compute_metrics::<f64>(&ConfusionMatrix::zeros(3)).is_err());
    }
}
