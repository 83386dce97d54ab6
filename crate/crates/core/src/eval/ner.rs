//! Span matching, strict and boundary-relaxed.
//!
//! Categories are scored independently. Within a category, predictions are
//! walked in ascending `(start, end)` order and each claims the first
//! unclaimed gold span it matches. Exact matches are assigned in a first pass;
//! in relaxed mode a second pass lets the remaining predictions claim a
//! remaining gold span sharing its start or its end offset.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{harmonic, ratio};
use crate::corpus::EntitySpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    Relaxed,
}

impl std::str::FromStr for MatchMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "relaxed" => Ok(MatchMode::Relaxed),
            other => Err(crate::Error::Config(format!("unknown match mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for NerCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn sorted_of<'a>(spans: &'a [EntitySpan], category: &str) -> Vec<&'a EntitySpan> {
    let mut v: Vec<&EntitySpan> = spans.iter().filter(|s| s.category == category).collect();
    v.sort_by_key(|s| (s.start, s.end));
    v
}

fn match_category(gold: &[&EntitySpan], pred: &[&EntitySpan], mode: MatchMode) -> NerCounts {
    let mut gold_taken = vec![false; gold.len()];
    let mut pred_done = vec![false; pred.len()];
    let mut tp = 0;

    let mut pass = |accept: &dyn Fn(&EntitySpan, &EntitySpan) -> bool| {
        for (pi, p) in pred.iter().enumerate() {
            if pred_done[pi] {
                continue;
            }
            if let Some(gi) = (0..gold.len()).find(|&gi| !gold_taken[gi] && accept(p, gold[gi])) {
                gold_taken[gi] = true;
                pred_done[pi] = true;
                tp += 1;
            }
        }
    };
    pass(&|p, g| p.start == g.start && p.end == g.end);
    if mode == MatchMode::Relaxed {
        pass(&|p, g| p.start == g.start || p.end == g.end);
    }
    NerCounts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

/// Per-category counts over the union of categories in `gold` and `pred`.
pub fn ner_match(gold: &[EntitySpan], pred: &[EntitySpan], mode: MatchMode) -> BTreeMap<String, NerCounts> {
    let cats: BTreeSet<&str> = gold.iter().chain(pred).map(|s| s.category.as_str()).collect();
    cats.into_iter()
        .map(|c| {
            let counts = match_category(&sorted_of(gold, c), &sorted_of(pred, c), mode);
            (c.to_string(), counts)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: NerCounts,
    pub degenerate: bool,
}

impl Prf {
    pub fn from_counts(c: NerCounts) -> Self {
        let (precision, dp) = ratio(c.tp, c.tp + c.fp);
        let (recall, dr) = ratio(c.tp, c.tp + c.fn_);
        Prf {
            precision,
            recall,
            f1: harmonic(precision, recall),
            counts: c,
            degenerate: dp || dr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerReport {
    pub per_category: BTreeMap<String, Prf>,
    /// Pooled counts over all categories.
    pub micro: Prf,
    /// Unweighted mean of per-category precision, recall and F1 over the
    /// categories with at least one gold or predicted span.
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
}

pub fn ner_metrics(counts: &BTreeMap<String, NerCounts>) -> NerReport {
    let per_category: BTreeMap<String, Prf> = counts.iter().map(|(k, c)| (k.clone(), Prf::from_counts(*c))).collect();
    let mut pooled = NerCounts::default();
    for c in counts.values() {
        pooled += *c;
    }
    // categories with neither gold nor predicted spans carry no signal
    let active: Vec<&Prf> = per_category
        .values()
        .filter(|p| p.counts.tp + p.counts.fp + p.counts.fn_ > 0)
        .collect();
    let mean = |f: fn(&Prf) -> f64| {
        if active.is_empty() {
            0.0
        } else {
            active.iter().map(|p| f(p)).sum::<f64>() / active.len() as f64
        }
    };
    let macro_avg = Prf {
        precision: mean(|p| p.precision),
        recall: mean(|p| p.recall),
        f1: mean(|p| p.f1),
        counts: pooled,
        degenerate: active.is_empty() || active.iter().any(|p| p.degenerate),
    };
    NerReport {
        micro: Prf::from_counts(pooled),
        per_category,
        macro_avg,
    }
}
