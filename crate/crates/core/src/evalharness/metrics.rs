//! Binary-classification metrics with vulnerable as the positive class.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("{predicted} predictions but {labels} labels")]
    LengthMismatch { predicted: usize, labels: usize },
    #[error("coefficient of variation is undefined for a series with mean 0")]
    ZeroMean,
    #[error("coefficient of variation needs at least one value")]
    EmptySeries,
    #[error("series value {0} is not finite")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Vulnerable, Label::Vulnerable) => self.tp += 1,
            (Label::Vulnerable, Label::Benign) => self.fp += 1,
            (Label::Benign, Label::Benign) => self.tn += 1,
            (Label::Benign, Label::Vulnerable) => self.fn_ += 1,
        }
    }
}

pub fn confusion(predicted: &[Label], labels: &[Label]) -> Result<ConfusionCounts, MetricsError> {
    if predicted.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            labels: labels.len(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &l) in predicted.iter().zip(labels) {
        counts.record(p, l);
    }
    Ok(counts)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// FP / (FP + TN); 0 when there are no negatives.
pub fn fpr(c: &ConfusionCounts) -> f64 {
    ratio(c.fp, c.fp + c.tn)
}

/// Precision, recall and F1; each is 0 when its denominator is 0.
pub fn precision_recall_f1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Matthews correlation; 0 when any marginal is 0.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let (a, b, d, e) = (tp + fp, tp + fn_, tn + fp, tn + fn_);
    if a == 0.0 || b == 0.0 || d == 0.0 || e == 0.0 {
        return 0.0;
    }
    let value = (tp * tn - fp * fn_) / ((a * b).sqrt() * (d * e).sqrt());
    value.clamp(-1.0, 1.0)
}

/// Population standard deviation over mean. Values need not be
/// probabilities, only finite.
pub fn cv(series: &[f64]) -> Result<f64, MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    if let Some(&bad) = series.iter().find(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(bad));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(MetricsError::ZeroMean);
    }
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub mcc: f64,
    pub counts: ConfusionCounts,
    pub unparseable: u64,
    /// Zero-denominator conventions that were applied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts, unparseable: u64) -> Self {
        let (precision, recall, f1) = precision_recall_f1(&counts);
        let mut notes = Vec::new();
        let c = &counts;
        if c.tp + c.fp == 0 {
            notes.push("no positive predictions: precision reported as 0".to_owned());
        }
        if c.tp + c.fn_ == 0 {
            notes.push("no vulnerable samples: recall reported as 0".to_owned());
        }
        if c.fp + c.tn == 0 {
            notes.push("no benign samples: FPR reported as 0".to_owned());
        }
        if [c.tp + c.fp, c.tp + c.fn_, c.tn + c.fp, c.tn + c.fn_].contains(&0) {
            notes.push("a confusion marginal is 0: MCC reported as 0".to_owned());
        }
        Self {
            precision,
            recall,
            f1,
            fpr: fpr(&counts),
            mcc: mcc(&counts),
            counts,
            unparseable,
            notes,
        }
    }

    pub fn from_labels(predicted: &[Label], labels: &[Label]) -> Result<Self, MetricsError> {
        Ok(Self::from_counts(confusion(predicted, labels)?, 0))
    }
}
