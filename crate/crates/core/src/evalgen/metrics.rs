//! Detection and ranking metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgio::BBox;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("ROC AUC needs both positive and negative examples")]
    SingleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl Prf {
    /// From match counts. Both sets empty scores 1/1; an empty side alone
    /// scores 0 on its ratio.
    pub fn from_counts(matched: usize, predicted: usize, truth: usize) -> Prf {
        if predicted == 0 && truth == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f_score: 1.0,
            };
        }
        let ratio = |n: usize| if n == 0 { 0.0 } else { matched as f64 / n as f64 };
        let (precision, recall) = (ratio(predicted), ratio(truth));
        Prf {
            precision,
            recall,
            f_score: f_score(precision, recall),
        }
    }
}

/// Greedy one-to-one matching: pairs at or above `min_iou` are taken in
/// descending IoU order (ties by predicted, then truth index).
pub fn match_boxes(predicted: &[BBox], truth: &[BBox], min_iou: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let iou = p.iou(t);
            if iou >= min_iou {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            out.push((i, j));
        }
    }
    out
}

pub fn prf(predicted: &[BBox], truth: &[BBox], min_iou: f64) -> Prf {
    let matched = match_boxes(predicted, truth, min_iou).len();
    Prf::from_counts(matched, predicted.len(), truth.len())
}

/// Area under the ROC curve by the trapezoid rule. Tied scores move the
/// curve diagonally in one step.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<f64, MetricError> {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let (tp0, fp0) = (tp, fp);
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Ok(area / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Precision, recall and F per operating threshold plus AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ThresholdRow>,
    pub auc: Option<f64>,
}

/// Classification report: an example is predicted positive when its
/// score is at least the threshold.
pub fn classification_report(scores: &[(f64, bool)], thresholds: &[f64]) -> EvalReport {
    let truth = scores.iter().filter(|s| s.1).count();
    let rows = thresholds
        .iter()
        .map(|&t| {
            let predicted = scores.iter().filter(|s| s.0 >= t).count();
            let matched = scores.iter().filter(|s| s.0 >= t && s.1).count();
            let p = Prf::from_counts(matched, predicted, truth);
            ThresholdRow {
                threshold: t,
                precision: p.precision,
                recall: p.recall,
                f_score: p.f_score,
            }
        })
        .collect();
    EvalReport {
        rows,
        auc: roc_auc(scores).ok(),
    }
}
