//! Token-overlap scoring for extractive QA and the annotation-disagreement report.
//!
//! Answers are tokenized by lower-casing, deleting every character that is
//! neither alphanumeric nor whitespace, and splitting on whitespace. Overlap
//! is a multiset intersection.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{harmonic, PredictionRecord, Task};
use crate::error::{Error, Result};

pub const DEFAULT_F1_THRESHOLD: f64 = 0.3;

pub fn normalize_answer(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn qa_token_prf(pred: &str, gold: &str) -> TokenPrf {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    if p.is_empty() || g.is_empty() {
        let v = if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
        return TokenPrf {
            precision: v,
            recall: v,
            f1: v,
        };
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *bag.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(n) = bag.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    TokenPrf {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub n: usize,
    /// Mean of per-record precision.
    pub precision: f64,
    /// Mean of per-record recall.
    pub recall: f64,
    /// Harmonic mean of the two means above (headline figure).
    pub f1: f64,
    /// Mean of per-record F1, for comparison.
    pub mean_record_f1: f64,
}

fn qa_pair(r: &PredictionRecord) -> Result<(&str, &str)> {
    if r.task != Task::Qa {
        return Err(Error::Validation(format!("record {:?} is not a QA record", r.id)));
    }
    match (r.predicted.as_text(), r.gold.as_text()) {
        (Some(p), Some(g)) => Ok((p, g)),
        _ => Err(Error::Validation(format!(
            "record {:?} carries spans, expected answers",
            r.id
        ))),
    }
}

pub fn qa_metrics(records: &[PredictionRecord]) -> Result<QaReport> {
    if records.is_empty() {
        return Err(Error::Validation("no QA predictions to score".into()));
    }
    let mut sums = (0.0, 0.0, 0.0);
    for r in records {
        let (p, g) = qa_pair(r)?;
        let s = qa_token_prf(p, g);
        sums.0 += s.precision;
        sums.1 += s.recall;
        sums.2 += s.f1;
    }
    let n = records.len() as f64;
    let (precision, recall) = (sums.0 / n, sums.1 / n);
    Ok(QaReport {
        n: records.len(),
        precision,
        recall,
        f1: harmonic(precision, recall),
        mean_record_f1: sums.2 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisagreementReason {
    NotMentionedPattern,
    LowOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub id: String,
    pub predicted: String,
    pub gold: String,
    pub f1: f64,
    pub reason: DisagreementReason,
}

fn not_mentioned() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bnot\s+(?:mentioned|stated|specified|given|provided|found)\b").expect("valid regex")
    })
}

/// Records where the model and the annotation disagree, lowest F1 first.
///
/// A record is flagged when the model says the answer is not in the text while
/// the gold answer is non-empty, or when token F1 falls below `f1_threshold`.
pub fn disagreement_report(records: &[PredictionRecord], f1_threshold: f64) -> Result<Vec<Disagreement>> {
    let mut out = Vec::new();
    for r in records {
        let (pred, gold) = qa_pair(r)?;
        let f1 = qa_token_prf(pred, gold).f1;
        let reason = if !gold.trim().is_empty() && not_mentioned().is_match(pred) {
            Some(DisagreementReason::NotMentionedPattern)
        } else if f1 < f1_threshold {
            Some(DisagreementReason::LowOverlap)
        } else {
            None
        };
        if let Some(reason) = reason {
            out.push(Disagreement {
                id: r.id.clone(),
                predicted: pred.to_string(),
                gold: gold.to_string(),
                f1,
                reason,
            });
        }
    }
    out.sort_by(|a, b| a.f1.total_cmp(&b.f1).then_with(|| a.id.cmp(&b.id)));
    Ok(out)
}
