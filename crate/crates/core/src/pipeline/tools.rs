//! Standalone steps behind the `export-finetune`, `evaluate` and `report` commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Manifest, Metrics, NerMetrics};
use crate::corpus::{ingest_classification, ingest_ner, ingest_qa, read_jsonl};
use crate::error::{Error, Result};
use crate::eval::report::{render_calibration, render_classification, render_disagreements, render_ner, render_qa};
use crate::eval::{
    classification_metrics, disagreement_report, ece, ner_match, ner_metrics, qa_metrics, CalibrationReport,
    Disagreement, MatchMode, MetricsReport, NerCounts, PredictionRecord, QaReport, Task,
};
use crate::gateway::{export_finetune_jsonl, recommended_finetune_config, ExportReport, FineTuneConfig};
use crate::marker::{encode_markers, MarkerScheme};
use crate::prompt::{build_finetune_pair, qa_block, PromptTemplate, TokenCounter};

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneExport {
    pub report: ExportReport,
    pub recommended: FineTuneConfig,
    /// Ids left out because their target is empty.
    pub skipped: Vec<String>,
}

/// Compiles a corpus into fine-tune prompt/completion pairs and writes them.
///
/// Classification maps text to label, NER maps text to its marked copy for
/// one `category`, QA maps the context/question block to the answer.
pub fn export_finetune(
    task: Task,
    corpus: &Path,
    out: &Path,
    template: &PromptTemplate,
    counter: &dyn TokenCounter,
    category: Option<&str>,
    base_model: &str,
) -> Result<FinetuneExport> {
    template.validate()?;
    let mut skipped = Vec::new();
    let raw: Vec<(String, String, String)> = match task {
        Task::Classification => ingest_classification(corpus, None)?
            .into_iter()
            .map(|d| (d.doc.id, d.doc.text, d.label))
            .collect(),
        Task::Ner => {
            let cat = category.ok_or_else(|| Error::Config("NER export needs a category".into()))?;
            let scheme = MarkerScheme::default();
            ingest_ner(corpus)?
                .into_iter()
                .map(|d| {
                    let marked = encode_markers(&d.doc.text, &d.spans_of(cat), cat, &scheme)?;
                    Ok((d.doc.id, d.doc.text, marked))
                })
                .collect::<Result<_>>()?
        }
        Task::Qa => ingest_qa(corpus)?
            .into_iter()
            .map(|r| (r.id, qa_block(&r.question, &r.context), r.gold_answer))
            .collect(),
    };
    let mut pairs = Vec::with_capacity(raw.len());
    for (id, input, target) in raw {
        if target.trim().is_empty() {
            skipped.push(id);
            continue;
        }
        pairs
            .push(build_finetune_pair(&input, &target, template).map_err(|e| Error::Validation(format!("{id}: {e}")))?);
    }
    if pairs.is_empty() {
        return Err(Error::Validation("no exportable records".into()));
    }
    let report = export_finetune_jsonl(&pairs, out, template, counter)?;
    Ok(FinetuneExport {
        recommended: recommended_finetune_config(pairs.len(), base_model)?,
        report,
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub positive_label: String,
    pub bins: usize,
    pub f1_threshold: f64,
    pub match_mode: MatchMode,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            positive_label: "battery".into(),
            bins: crate::eval::DEFAULT_BINS,
            f1_threshold: crate::eval::DEFAULT_F1_THRESHOLD,
            match_mode: MatchMode::Exact,
        }
    }
}

/// Scores a predictions file; the task comes from its records.
pub fn evaluate_predictions(path: &Path, opts: &EvaluateOptions) -> Result<Metrics> {
    let preds: Vec<PredictionRecord> = read_jsonl(path)?.into_iter().map(|(_, p)| p).collect();
    let Some(first) = preds.first() else {
        return Err(Error::Validation(format!("{} has no predictions", path.display())));
    };
    let task = first.task;
    if let Some(p) = preds.iter().find(|p| p.task != task) {
        return Err(Error::Validation(format!("record {:?} mixes tasks", p.id)));
    }
    Ok(match task {
        Task::Classification => {
            let metrics = classification_metrics(&preds, &opts.positive_label)?;
            let calibration = if preds.iter().all(|p| p.confidence.is_some()) {
                Some(ece(&preds, opts.bins)?)
            } else {
                None
            };
            Metrics::Classification { metrics, calibration }
        }
        Task::Ner => {
            let mut exact = std::collections::BTreeMap::<String, NerCounts>::new();
            let mut relaxed = exact.clone();
            for p in &preds {
                let (Some(pred), Some(gold)) = (p.predicted.as_spans(), p.gold.as_spans()) else {
                    return Err(Error::Validation(format!(
                        "record {:?} carries text, expected spans",
                        p.id
                    )));
                };
                for (acc, mode) in [(&mut exact, MatchMode::Exact), (&mut relaxed, MatchMode::Relaxed)] {
                    for (cat, c) in ner_match(gold, pred, mode) {
                        *acc.entry(cat).or_default() += c;
                    }
                }
            }
            Metrics::Ner(NerMetrics {
                headline: opts.match_mode,
                exact: ner_metrics(&exact),
                relaxed: ner_metrics(&relaxed),
                anomalies: Vec::new(),
            })
        }
        Task::Qa => Metrics::Qa {
            metrics: qa_metrics(&preds)?,
            disagreements: disagreement_report(&preds, opts.f1_threshold)?,
        },
    })
}

pub fn render_metrics(m: &Metrics) -> String {
    match m {
        Metrics::Classification { metrics, calibration } => {
            let mut s = render_classification(metrics);
            if let Some(c) = calibration {
                s.push('\n');
                s.push_str(&render_calibration(c));
            }
            s
        }
        Metrics::Ner(n) => {
            let (first, second) = match n.headline {
                MatchMode::Exact => (("exact", &n.exact), ("relaxed", &n.relaxed)),
                MatchMode::Relaxed => (("relaxed", &n.relaxed), ("exact", &n.exact)),
            };
            let mut s = String::new();
            for (name, r) in [first, second] {
                s.push_str(&format!("[{name}]\n{}\n", render_ner(r)));
            }
            if !n.anomalies.is_empty() {
                s.push_str(&format!("decode anomalies: {}\n", n.anomalies.len()));
            }
            s
        }
        Metrics::Qa { metrics, disagreements } => {
            let mut s = render_qa(metrics);
            s.push_str(&format!("\ndisagreements: {}\n", disagreements.len()));
            if !disagreements.is_empty() {
                s.push_str(&render_disagreements(disagreements));
            }
            s
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Plain-text summary of a finished run directory.
pub fn render_run(dir: &Path) -> Result<String> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let mut s = format!(
        "task: {:?}\nmode: {}\nbackend: {}\nseed: {}\nconfig sha256: {}\nevaluated: {}  predictions: {}  failures: {}\n\n",
        manifest.task,
        serde_json::to_value(manifest.mode)?.as_str().unwrap_or_default(),
        manifest.backend,
        manifest.seed,
        manifest.config_sha256,
        manifest.counts.evaluated,
        manifest.counts.predictions,
        manifest.counts.failures,
    );
    if !manifest.outputs.iter().any(|o| o == "metrics.json") {
        s.push_str("no metrics (prompts only)\n");
        return Ok(s);
    }
    let metrics = match manifest.task {
        Task::Classification => {
            let metrics: MetricsReport = read_json(&dir.join("metrics.json"))?;
            let calibration: Option<CalibrationReport> = if manifest.outputs.iter().any(|o| o == "calibration.json") {
                Some(read_json(&dir.join("calibration.json"))?)
            } else {
                None
            };
            Metrics::Classification { metrics, calibration }
        }
        Task::Ner => Metrics::Ner(read_json(&dir.join("metrics.json"))?),
        Task::Qa => {
            let metrics: QaReport = read_json(&dir.join("metrics.json"))?;
            let disagreements: Vec<Disagreement> = read_json(&dir.join("disagreements.json"))?;
            Metrics::Qa { metrics, disagreements }
        }
    };
    s.push_str(&render_metrics(&metrics));
    for note in &manifest.notes {
        s.push_str(&format!("note: {note}\n"));
    }
    Ok(s)
}
