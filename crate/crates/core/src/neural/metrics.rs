use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub rmse: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// Thresholds probabilities at 0.5 (positive when strictly above) and
/// scores them against binary labels. RMSE uses the raw probabilities.
pub fn classification_metrics(predictions: &[f64], labels: &[u8]) -> Result<ClassificationMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    if !labels.contains(&1) {
        return Err(Error::UndefinedMetric("recall is undefined without positive labels".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let mut sq = 0.0;
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p > 0.5, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
        sq += (p - l as f64).powi(2);
    }
    let n = labels.len() as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationMetrics {
        accuracy: (tp + tn) as f64 / n,
        recall,
        precision,
        f1,
        rmse: (sq / n).sqrt(),
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
    })
}
