//! Classification metrics: confusion matrix, weighted and macro summaries,
//! one-vs-rest ROC and precision-recall curves.

mod curves;
mod report;

pub use curves::{pr_curve_ovr, roc_curve_ovr, Curve, CurvePoint};
pub use report::{evaluate, predict, MetricsReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-6;

/// One scored sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub predicted: usize,
    pub scores: Vec<f64>,
}

/// Scored samples over a fixed class count.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    num_classes: usize,
    samples: Vec<Prediction>,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

impl PredictionSet {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            samples: Vec::new(),
        }
    }

    /// Adds a sample with a probability vector over the classes.
    pub fn push(&mut self, label: usize, scores: Vec<f64>) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::validation(format!(
                "label {label} outside the {}-class set",
                self.num_classes
            )));
        }
        if scores.len() != self.num_classes {
            return Err(Error::validation(format!(
                "expected {} scores, got {}",
                self.num_classes,
                scores.len()
            )));
        }
        if scores.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::validation("scores must be finite and nonnegative"));
        }
        let total: f64 = scores.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::validation(format!("scores sum to {total}, not 1")));
        }
        let predicted = argmax(&scores);
        self.samples.push(Prediction {
            label,
            predicted,
            scores,
        });
        Ok(())
    }

    /// Adds a sample from raw logits, scored by softmax.
    pub fn push_logits(&mut self, label: usize, logits: &[f64]) -> Result<()> {
        self.push(label, softmax(logits))
    }

    pub fn from_scores(num_classes: usize, labels: &[usize], scores: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::validation("labels and scores differ in length"));
        }
        let mut set = Self::new(num_classes);
        for (&label, s) in labels.iter().zip(scores) {
            set.push(label, s)?;
        }
        Ok(set)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[Prediction] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn non_empty(&self) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::validation("no predictions"))
        } else {
            Ok(())
        }
    }
}

/// Counts indexed `[true][predicted]`.
pub fn confusion_matrix(preds: &PredictionSet) -> Result<Vec<Vec<u64>>> {
    preds.non_empty()?;
    let k = preds.num_classes;
    let mut m = vec![vec![0u64; k]; k];
    for s in &preds.samples {
        m[s.label][s.predicted] += 1;
    }
    Ok(m)
}

/// How per-class scores are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Weighted by true-class support.
    #[default]
    Weighted,
    /// Unweighted mean over classes with nonzero support.
    Macro,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `num / den`, or 0 when the denominator vanishes.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn summarize(preds: &PredictionSet, averaging: Averaging) -> Result<Summary> {
    let m = confusion_matrix(preds)?;
    let k = preds.num_classes;
    let total = preds.len() as f64;
    let trace: u64 = (0..k).map(|c| m[c][c]).sum();

    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    let mut present = 0usize;
    for c in 0..k {
        let tp = m[c][c] as f64;
        let support = m[c].iter().sum::<u64>() as f64;
        let predicted = (0..k).map(|r| m[r][c]).sum::<u64>() as f64;
        if support == 0.0 {
            continue;
        }
        present += 1;
        // Multiply before dividing so support-weighted recall collapses to
        // tp exactly and the weighted mean reproduces accuracy bit for bit.
        let w = match averaging {
            Averaging::Weighted => support,
            Averaging::Macro => 1.0,
        };
        let p_c = ratio(tp, predicted);
        let r_c = ratio(tp, support);
        precision += ratio(w * tp, predicted);
        recall += ratio(w * tp, support);
        f1 += w * ratio(2.0 * p_c * r_c, p_c + r_c);
    }
    let norm = match averaging {
        Averaging::Weighted => total,
        Averaging::Macro => present as f64,
    };
    Ok(Summary {
        accuracy: trace as f64 / total,
        precision: precision / norm,
        recall: recall / norm,
        f1: f1 / norm,
    })
}

/// Support-weighted `(accuracy, precision, recall, f1)`.
pub fn weighted_metrics(preds: &PredictionSet) -> Result<Summary> {
    summarize(preds, Averaging::Weighted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(k: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[c] = 1.0;
        v
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn confusion_of_single_miss() {
        let set = PredictionSet::from_scores(3, &[0], vec![one_hot(3, 2)]).unwrap();
        let m = confusion_matrix(&set).unwrap();
        assert_eq!(m, vec![vec![0, 0, 1], vec![0; 3], vec![0; 3]]);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 3, 4, 2];
        let scores = labels.iter().map(|&c| one_hot(5, c)).collect();
        let set = PredictionSet::from_scores(5, &labels, scores).unwrap();
        let s = weighted_metrics(&set).unwrap();
        assert_eq!((s.accuracy, s.precision, s.recall, s.f1), (1.0, 1.0, 1.0, 1.0));
        let m = confusion_matrix(&set).unwrap();
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v > 0, i == j);
            }
        }
    }

    #[test]
    fn collapsed_binary_toy() {
        let labels = [0, 0, 0, 1];
        let set = PredictionSet::from_scores(2, &labels, vec![one_hot(2, 0); 4]).unwrap();
        let s = weighted_metrics(&set).unwrap();
        assert_eq!(s.accuracy, 0.75);
        assert_eq!(s.recall, 0.75);
        assert!((s.precision - 0.5625).abs() < 1e-12);
        // class 0: p = 3/4, r = 1, f1 = 6/7; weighted by 3/4
        assert!((s.f1 - 0.75 * 6.0 / 7.0).abs() < 1e-12);
        assert!((s.f1 - 0.6429).abs() < 1e-4);
    }

    #[test]
    fn invalid_samples_are_rejected() {
        let mut set = PredictionSet::new(2);
        assert!(set.push(2, vec![0.5, 0.5]).is_err());
        assert!(set.push(0, vec![0.5, 0.6]).is_err());
        assert!(set.push(0, vec![1.0]).is_err());
        assert!(confusion_matrix(&set).is_err());
    }

    #[test]
    fn macro_averages_present_classes() {
        let labels = [0, 0, 1, 1];
        let preds = [0, 1, 1, 1];
        let set = PredictionSet::from_scores(3, &labels, preds.iter().map(|&p| one_hot(3, p)).collect()).unwrap();
        let s = summarize(&set, Averaging::Macro).unwrap();
        assert!((s.recall - 0.75).abs() < 1e-12);
        assert!((s.precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }
}
