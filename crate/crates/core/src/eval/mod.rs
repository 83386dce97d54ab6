//! Scoring: classification, calibration, NER span matching, QA token overlap.
//!
//! Every function here is pure. Zero denominators produce 0 together with a
//! `degenerate` flag instead of an error, so a batch report is always complete.

mod calibration;
mod classification;
mod ner;
mod qa;
pub mod report;

use serde::{Deserialize, Serialize};

use crate::corpus::EntitySpan;

pub use calibration::{bin_index, ece, ece_from_samples, BinStat, CalibrationReport, DEFAULT_BINS};
pub use classification::{classification_metrics, normalize_label, Counts, MetricsReport};
pub use ner::{ner_match, ner_metrics, MatchMode, NerCounts, NerReport, Prf};
pub use qa::{
    disagreement_report, normalize_answer, qa_metrics, qa_token_prf, Disagreement, DisagreementReason, QaReport,
    TokenPrf, DEFAULT_F1_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Ner,
    Qa,
}

impl std::str::FromStr for Task {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "ner" => Ok(Task::Ner),
            "qa" => Ok(Task::Qa),
            other => Err(crate::Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// A category/answer string, or a span list for NER.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Text(String),
    Spans(Vec<EntitySpan>),
}

impl Payload {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Payload::Text(t) => Some(t),
            Payload::Spans(_) => None,
        }
    }

    pub fn as_spans(&self) -> Option<&[EntitySpan]> {
        match self {
            Payload::Spans(s) => Some(s),
            Payload::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub task: Task,
    pub predicted: Payload,
    pub gold: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl PredictionRecord {
    pub fn text(task: Task, id: impl Into<String>, predicted: impl Into<String>, gold: impl Into<String>) -> Self {
        PredictionRecord {
            id: id.into(),
            task,
            predicted: Payload::Text(predicted.into()),
            gold: Payload::Text(gold.into()),
            confidence: None,
        }
    }

    pub fn with_confidence(mut self, c: f64) -> Self {
        self.confidence = Some(c);
        self
    }

    /// Whether the prediction counts as correct for calibration: normalized
    /// label equality for text, identical span sets for NER.
    pub fn is_correct(&self) -> bool {
        match (&self.predicted, &self.gold) {
            (Payload::Text(p), Payload::Text(g)) => normalize_label(p) == normalize_label(g),
            (Payload::Spans(p), Payload::Spans(g)) => {
                let key = |s: &EntitySpan| (s.start, s.end, s.category.clone());
                let mut a: Vec<_> = p.iter().map(key).collect();
                let mut b: Vec<_> = g.iter().map(key).collect();
                a.sort();
                b.sort();
                a == b
            }
            _ => false,
        }
    }
}

pub(crate) fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub(crate) fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
