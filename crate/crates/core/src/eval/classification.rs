use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{harmonic, ratio, PredictionRecord, Task};
use crate::error::{Error, Result};

/// Trim and case-fold.
pub fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    /// Metrics whose denominator was zero (reported as 0).
    pub degenerate: Vec<String>,
    /// Ids whose prediction matched no known category; scored as negative.
    pub unmatched_predictions: Vec<String>,
}

/// Binary confusion counts against `positive_label`.
///
/// Predictions and gold labels are compared after trimming and case-folding.
/// The known categories are the gold labels plus `positive_label`; a prediction
/// outside them counts as a negative prediction and its id is listed in
/// `unmatched_predictions`.
pub fn classification_metrics(preds: &[PredictionRecord], positive_label: &str) -> Result<MetricsReport> {
    if preds.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    let positive = normalize_label(positive_label);
    let mut known: HashSet<String> = HashSet::from([positive.clone()]);
    let mut pairs = Vec::with_capacity(preds.len());
    for p in preds {
        if p.task != Task::Classification {
            return Err(Error::Validation(format!(
                "record {:?} is not a classification record",
                p.id
            )));
        }
        let (Some(pred), Some(gold)) = (p.predicted.as_text(), p.gold.as_text()) else {
            return Err(Error::Validation(format!(
                "record {:?} carries spans, expected labels",
                p.id
            )));
        };
        let gold = normalize_label(gold);
        known.insert(gold.clone());
        pairs.push((p.id.as_str(), normalize_label(pred), gold));
    }

    let mut counts = Counts::default();
    let mut unmatched = Vec::new();
    for (id, pred, gold) in &pairs {
        if !known.contains(pred) {
            unmatched.push(id.to_string());
        }
        match (*pred == positive, *gold == positive) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }

    let mut degenerate = Vec::new();
    let (precision, dp) = ratio(counts.tp, counts.tp + counts.fp);
    let (recall, dr) = ratio(counts.tp, counts.tp + counts.fn_);
    if dp {
        degenerate.push("precision".to_string());
    }
    if dr {
        degenerate.push("recall".to_string());
    }
    let accuracy = (counts.tp + counts.tn) as f64 / counts.total() as f64;
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1: harmonic(precision, recall),
        counts,
        degenerate,
        unmatched_predictions: unmatched,
    })
}
