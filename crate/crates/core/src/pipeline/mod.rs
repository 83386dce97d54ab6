//! End-to-end runs: load, split, prompt, complete, decode, score, write.
//!
//! A run writes into `paths.output_dir`:
//! - `predictions.jsonl`: one [`PredictionRecord`] per scored record;
//! - `prompts.jsonl`: every prompt sent, with the ids of its examples;
//! - `failures.jsonl`: per-record backend, retrieval or budget failures;
//! - `metrics.json`, plus `calibration.json` for classification and
//!   `disagreements.json` / `flagged.jsonl` for QA;
//! - `manifest.json`: config digest, backend identity, seed and counts.
//!
//! Nothing time-dependent is written, so two runs of one config against the
//! mock backend produce identical bytes.

mod config;
mod tools;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    ingest_classification, ingest_ner, ingest_qa, sanitize_qa, split, ClassifiedDoc, EntitySpan, NerDoc, QaRecord,
    Split, SplitSpec,
};
use crate::embed::{classify_corpus, EmbeddingVector};
use crate::error::{Error, Result};
use crate::eval::{
    classification_metrics, disagreement_report, ece, ner_match, ner_metrics, normalize_label, qa_metrics,
    CalibrationReport, Disagreement, MatchMode, MetricsReport, NerCounts, NerReport, Payload, PredictionRecord,
    QaReport, Task,
};
use crate::gateway::{
    Backend, CallKind, ClassifyOracle, CompletionRequest, CompletionResponse, Gateway, LiveBackend, MockBackend,
    MockMode, NerOracle, QaOracle,
};
use crate::marker::{decode_markers, encode_markers, AnomalyKind, MarkerScheme};
use crate::prompt::{
    build_fewshot_prompt, build_finetuned_prompt, build_qa_prompt, enforce_budget, ner_task_phrase, ApproxTokenCounter,
    Budgeted,
};
use crate::retrieval::{knn_retrieve, random_retrieve, ExampleItem, ExampleStore};

pub use config::{
    BackendConfig, BackendKind, ClassificationConfig, EvalConfig, EvalOn, MockKind, Mode, NerConfig, Overrides, Paths,
    PipelineConfig, QaConfig, RetrievalConfig, RetrievalStrategy, SplitConfig, DEFAULT_API_KEY_ENV,
};
pub use tools::{evaluate_predictions, export_finetune, render_metrics, render_run, EvaluateOptions, FinetuneExport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLogEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Ids of the in-context examples, in prompt order.
    pub examples: Vec<String>,
    pub prompt: String,
    /// Prompt tokens plus the completion allowance.
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub records: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub evaluated: usize,
    pub flagged: usize,
    pub prompts: usize,
    pub predictions: usize,
    pub failures: usize,
    pub completion_calls: usize,
    pub embedding_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: Task,
    pub mode: Mode,
    pub stage: String,
    pub config_sha256: String,
    pub backend: String,
    pub seed: u64,
    pub counts: RunCounts,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub id: String,
    pub category: String,
    pub kind: AnomalyKind,
    pub fragment: String,
}

/// Contents of `metrics.json` for NER runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerMetrics {
    pub headline: MatchMode,
    pub exact: NerReport,
    pub relaxed: NerReport,
    pub anomalies: Vec<AnomalyRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metrics {
    Classification {
        metrics: MetricsReport,
        calibration: Option<CalibrationReport>,
    },
    Ner(NerMetrics),
    Qa {
        metrics: QaReport,
        disagreements: Vec<Disagreement>,
    },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub predictions: Vec<PredictionRecord>,
    pub prompts: Vec<PromptLogEntry>,
    pub failures: Vec<Failure>,
    /// `None` when the run stopped after building prompts.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Prompts,
    Full,
}

/// Runs the configured task end to end.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutcome> {
    dispatch(cfg, Stage::Full)
}

/// Builds and logs every prompt without requesting completions. kNN retrieval
/// still calls the embedding endpoint.
pub fn build_prompts(cfg: &PipelineConfig) -> Result<RunOutcome> {
    dispatch(cfg, Stage::Prompts)
}

pub fn run_classification(cfg: &PipelineConfig) -> Result<RunOutcome> {
    expect_task(cfg, Task::Classification)?;
    run(cfg)
}

pub fn run_ner(cfg: &PipelineConfig) -> Result<RunOutcome> {
    expect_task(cfg, Task::Ner)?;
    run(cfg)
}

pub fn run_qa(cfg: &PipelineConfig) -> Result<RunOutcome> {
    expect_task(cfg, Task::Qa)?;
    run(cfg)
}

fn expect_task(cfg: &PipelineConfig, task: Task) -> Result<()> {
    if cfg.task != task {
        return Err(Error::Config(format!(
            "config is for task {:?}, expected {task:?}",
            cfg.task
        )));
    }
    Ok(())
}

fn dispatch(cfg: &PipelineConfig, stage: Stage) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.task {
        Task::Classification => classification(cfg, stage),
        Task::Ner => ner(cfg, stage),
        Task::Qa => qa(cfg, stage),
    }
}

/// Per-query retrieval seed: stable in the run seed, record id and category.
pub fn derive_seed(seed: u64, id: &str, category: Option<&str>) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.update([0]);
    if let Some(c) = category {
        h.update(c.as_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

enum Gold<'a> {
    Classification(&'a [ClassifiedDoc], [String; 2]),
    Ner(&'a [NerDoc], MarkerScheme),
    Qa(&'a [QaRecord]),
}

fn build_gateway(cfg: &PipelineConfig, gold: Gold<'_>) -> Result<Gateway> {
    let b = &cfg.backend;
    let backend: Arc<dyn Backend> = match b.kind {
        BackendKind::Live => {
            let mut live = LiveBackend::from_env(b.base_url.clone(), &b.api_key_env)?;
            if let Some(r) = b.requests_per_second {
                live = live.with_rate_limit(r);
            }
            Arc::new(live)
        }
        BackendKind::Mock => {
            let mut mock = match b.mock {
                MockKind::Echo => MockBackend::new(MockMode::Echo {
                    suffix: cfg.template.prompt_suffix.clone(),
                }),
                MockKind::Fixture => {
                    let path = cfg.paths.completions.as_ref().expect("validated");
                    MockBackend::load_fixture(path)?
                }
                MockKind::Oracle => MockBackend::new(match gold {
                    Gold::Classification(docs, labels) => MockMode::Classify(ClassifyOracle::new(
                        docs.iter()
                            .map(|d| (d.doc.id.clone(), d.doc.text.clone(), d.label.clone())),
                        labels.to_vec(),
                        b.flip_fraction,
                    )),
                    Gold::Ner(docs, scheme) => MockMode::Ner(match b.drop_every {
                        Some(k) => NerOracle::dropping_every(docs, scheme, k),
                        None => NerOracle::perfect(docs, scheme),
                    }),
                    Gold::Qa(records) => MockMode::Qa(QaOracle::new(records, b.not_mentioned.iter().cloned())),
                }),
            };
            mock = mock.with_dim(b.mock_dim);
            if let Some(p) = &cfg.paths.embeddings {
                mock = mock.load_embeddings(p)?;
            }
            Arc::new(mock)
        }
    };
    Ok(Gateway::from_arc(backend).with_max_in_flight(b.max_in_flight))
}

fn split_spec(cfg: &PipelineConfig) -> SplitSpec {
    SplitSpec {
        seed: cfg.seed,
        ratios: cfg.split.ratios,
    }
}

fn eval_set<T: Clone>(cfg: &PipelineConfig, all: &[T], parts: &Split<T>) -> Result<Vec<T>> {
    let set = match cfg.split.eval_on {
        EvalOn::Test => parts.test.clone(),
        EvalOn::All => all.to_vec(),
    };
    if set.is_empty() {
        return Err(Error::Validation("evaluation set is empty; check split ratios".into()));
    }
    Ok(set)
}

fn base_counts<T>(records: usize, parts: &Split<T>, evaluated: usize) -> RunCounts {
    RunCounts {
        records,
        train: parts.train.len(),
        val: parts.val.len(),
        test: parts.test.len(),
        evaluated,
        ..RunCounts::default()
    }
}

fn embed_store(store: &mut ExampleStore, gateway: &Gateway, cfg: &PipelineConfig) -> Result<()> {
    let texts: Vec<String> = store.items().iter().map(|it| it.input.clone()).collect();
    let embs = gateway.embed_batched(&texts, &cfg.backend.embedding_model, cfg.backend.embedding_batch)?;
    store.set_embeddings(embs)
}

/// Picks the in-context examples for one query.
struct Selector<'a> {
    cfg: &'a PipelineConfig,
    k: usize,
    per_label: Option<BTreeMap<String, usize>>,
}

impl Selector<'_> {
    fn pick<'s>(
        &self,
        store: &'s ExampleStore,
        id: &str,
        category: Option<&str>,
        query: Option<&EmbeddingVector>,
    ) -> Result<Vec<&'s ExampleItem>> {
        match self.cfg.retrieval.strategy {
            RetrievalStrategy::Random => random_retrieve(
                store,
                self.k,
                derive_seed(self.cfg.seed, id, category),
                self.per_label.as_ref(),
            ),
            RetrievalStrategy::Knn => {
                let q = query.ok_or_else(|| Error::Validation("kNN retrieval without a query embedding".into()))?;
                let ranked: Vec<&ExampleItem> = knn_retrieve(q, store, self.k)?.into_iter().map(|(it, _)| it).collect();
                Ok(self.cfg.retrieval.order.arrange(ranked))
            }
        }
    }
}

fn query_embedding(cfg: &PipelineConfig, gateway: &Gateway, text: &str) -> Result<Option<EmbeddingVector>> {
    if cfg.retrieval.strategy == RetrievalStrategy::Knn {
        Ok(Some(gateway.embed_one(text, &cfg.backend.embedding_model)?))
    } else {
        Ok(None)
    }
}

fn log_entry(
    cfg: &PipelineConfig,
    id: &str,
    category: Option<&str>,
    examples: Vec<String>,
    prompt: String,
) -> std::result::Result<PromptLogEntry, Failure> {
    match enforce_budget(Budgeted::Prompt(&prompt), &ApproxTokenCounter, &cfg.template) {
        Ok(tokens) => Ok(PromptLogEntry {
            id: id.to_string(),
            category: category.map(str::to_string),
            examples,
            prompt,
            tokens,
        }),
        Err(e) => Err(failure(id, category, e)),
    }
}

fn failure(id: &str, category: Option<&str>, e: impl std::fmt::Display) -> Failure {
    Failure {
        id: id.to_string(),
        category: category.map(str::to_string),
        error: e.to_string(),
    }
}

fn fewshot_prompt(
    cfg: &PipelineConfig,
    phrase: Option<String>,
    picked: &[&ExampleItem],
    query: &str,
) -> (Vec<String>, String) {
    let pairs: Vec<(String, String)> = picked.iter().map(|e| (e.input.clone(), e.target.clone())).collect();
    let ids = picked.iter().map(|e| e.id.clone()).collect();
    let phrase = if cfg.retrieval.task_informed { phrase } else { None };
    (
        ids,
        build_fewshot_prompt(phrase.as_deref(), &pairs, query, &cfg.template),
    )
}

/// Sends every prompt; results line up with `jobs`.
fn execute(
    cfg: &PipelineConfig,
    gateway: &Gateway,
    jobs: &[PromptLogEntry],
    stop: &[String],
    logprobs: bool,
) -> Vec<std::result::Result<CompletionResponse, String>> {
    gateway.map_bounded(jobs, |job| {
        let mut req = CompletionRequest::new(cfg.backend.completion_model.clone(), job.prompt.clone())
            .with_stop(stop.to_vec())
            .for_record(job.id.clone(), job.category.as_deref());
        req.max_tokens = cfg.backend.max_tokens;
        if logprobs {
            req = req.with_logprobs();
        }
        gateway.complete(&req).map_err(|e| {
            log::warn!("record {}: {e}", job.id);
            e.to_string()
        })
    })
}

fn stop_for(cfg: &PipelineConfig, mode: Mode) -> Vec<String> {
    match mode {
        Mode::FineTuned => vec![cfg.template.completion_stop.clone()],
        _ => vec![cfg.template.example_separator.clone()],
    }
}

/// Probability the model put on its emitted label among `labels`.
///
/// When the first token's alternatives cover the emitted label, this is a
/// softmax over the alternatives that are candidate labels; otherwise the
/// product of the emitted tokens' probabilities. `None` without logprobs.
pub fn label_confidence(resp: &CompletionResponse, emitted: &str, labels: &[String]) -> Option<f64> {
    let tokens = resp.token_logprobs.as_ref()?;
    let first = tokens.first()?;
    let emitted = normalize_label(emitted);
    let candidates: Vec<String> = labels.iter().map(|l| normalize_label(l)).collect();
    let scored: Vec<(String, f64)> = first
        .top
        .iter()
        .map(|(t, lp)| (normalize_label(t), *lp))
        .filter(|(t, _)| candidates.contains(t))
        .collect();
    if let Some(&(_, own)) = scored.iter().find(|(t, _)| *t == emitted) {
        let z: f64 = scored.iter().map(|(_, lp)| libm::exp(lp - own)).sum();
        return Some((1.0 / z).clamp(0.0, 1.0));
    }
    let total: f64 = tokens.iter().map(|t| t.logprob).sum();
    Some(libm::exp(total).clamp(0.0, 1.0))
}

fn split_results(
    planned: Vec<std::result::Result<PromptLogEntry, Failure>>,
    failures: &mut Vec<Failure>,
) -> Vec<PromptLogEntry> {
    let mut jobs = Vec::with_capacity(planned.len());
    for p in planned {
        match p {
            Ok(j) => jobs.push(j),
            Err(f) => failures.push(f),
        }
    }
    jobs
}

// ---------------------------------------------------------------------------
// Classification

fn classification(cfg: &PipelineConfig, stage: Stage) -> Result<RunOutcome> {
    let c = &cfg.classification;
    let labels = c.labels();
    let docs = ingest_classification(&cfg.paths.corpus, Some(&labels))?;
    if docs.is_empty() {
        return Err(Error::Validation(format!(
            "corpus {} is empty",
            cfg.paths.corpus.display()
        )));
    }
    let parts = split(&docs, &split_spec(cfg))?;
    let eval = eval_set(cfg, &docs, &parts)?;
    let gateway = build_gateway(cfg, Gold::Classification(&docs, labels.clone()))?;
    let mut counts = base_counts(docs.len(), &parts, eval.len());
    let mut failures = Vec::new();
    let mut notes = Vec::new();

    if c.mode == Mode::ZeroShot {
        let mut predictions = Vec::new();
        if stage == Stage::Full {
            let scheme = c.label_scheme()?;
            let plain: Vec<_> = eval.iter().map(|d| d.doc.clone()).collect();
            let out = classify_corpus(&plain, &scheme, &gateway, &cfg.backend.embedding_model, c.tau)?;
            for (gold, p) in eval.iter().zip(out) {
                match p.outcome {
                    Ok(z) => {
                        let label = if z.positive {
                            &c.positive_label
                        } else {
                            &c.negative_label
                        };
                        predictions.push(
                            PredictionRecord::text(Task::Classification, &gold.doc.id, label, &gold.label)
                                .with_confidence(z.confidence),
                        );
                    }
                    Err(e) => failures.push(failure(&gold.doc.id, None, e)),
                }
            }
        } else {
            notes.push("zero-shot classification sends no prompts".into());
        }
        return finish_classification(cfg, stage, &gateway, counts, Vec::new(), predictions, failures, notes);
    }

    let jobs: Vec<PromptLogEntry> = if c.mode == Mode::FewShot {
        let mut store = ExampleStore::new(
            parts
                .train
                .iter()
                .map(|d| ExampleItem::new(&d.doc.id, &d.doc.text, &d.label).with_label(&d.label))
                .collect(),
        )?;
        let shots = cfg.retrieval.shots;
        let selector = match cfg.retrieval.strategy {
            RetrievalStrategy::Random => {
                for l in &labels {
                    let have = parts.train.iter().filter(|d| d.label == *l).count();
                    if have < shots {
                        return Err(Error::Validation(format!(
                            "train split has {have} example(s) of {l:?}, {shots} needed per label"
                        )));
                    }
                }
                Selector {
                    cfg,
                    k: 2 * shots,
                    per_label: Some(labels.iter().map(|l| (l.clone(), shots)).collect()),
                }
            }
            RetrievalStrategy::Knn => {
                if store.len() < 2 * shots {
                    return Err(Error::Validation(format!(
                        "train split has {} example(s), {} needed",
                        store.len(),
                        2 * shots
                    )));
                }
                embed_store(&mut store, &gateway, cfg)?;
                Selector {
                    cfg,
                    k: 2 * shots,
                    per_label: None,
                }
            }
        };
        let planned = gateway.map_bounded(&eval, |d| {
            let id = d.doc.id.as_str();
            let q = query_embedding(cfg, &gateway, &d.doc.text).map_err(|e| failure(id, None, e))?;
            let picked = selector
                .pick(&store, id, None, q.as_ref())
                .map_err(|e| failure(id, None, e))?;
            let (ids, prompt) = fewshot_prompt(cfg, Some(c.task_phrase.clone()), &picked, &d.doc.text);
            log_entry(cfg, id, None, ids, prompt)
        });
        split_results(planned, &mut failures)
    } else {
        let planned: Vec<_> = eval
            .iter()
            .map(|d| {
                log_entry(
                    cfg,
                    &d.doc.id,
                    None,
                    Vec::new(),
                    build_finetuned_prompt(&d.doc.text, &cfg.template),
                )
            })
            .collect();
        split_results(planned, &mut failures)
    };

    let mut predictions = Vec::new();
    if stage == Stage::Full {
        let gold: BTreeMap<&str, &str> = eval.iter().map(|d| (d.doc.id.as_str(), d.label.as_str())).collect();
        let responses = execute(cfg, &gateway, &jobs, &stop_for(cfg, c.mode), true);
        for (job, resp) in jobs.iter().zip(responses) {
            match resp {
                Ok(r) => {
                    let label = cfg.template.clean_completion(&r.text).to_string();
                    let mut rec = PredictionRecord::text(Task::Classification, &job.id, &label, gold[job.id.as_str()]);
                    rec.confidence = label_confidence(&r, &label, &labels);
                    predictions.push(rec);
                }
                Err(e) => failures.push(failure(&job.id, None, e)),
            }
        }
    }
    counts.prompts = jobs.len();
    finish_classification(cfg, stage, &gateway, counts, jobs, predictions, failures, notes)
}

#[allow(clippy::too_many_arguments)]
fn finish_classification(
    cfg: &PipelineConfig,
    stage: Stage,
    gateway: &Gateway,
    counts: RunCounts,
    prompts: Vec<PromptLogEntry>,
    predictions: Vec<PredictionRecord>,
    failures: Vec<Failure>,
    mut notes: Vec<String>,
) -> Result<RunOutcome> {
    let mut w = Writer::new(cfg, stage, gateway, counts, cfg.classification.mode)?;
    w.prompts(&prompts)?;
    w.failures(&failures)?;
    if stage == Stage::Prompts {
        return w.done(notes, predictions, prompts, failures, None);
    }
    ensure_some_succeeded(&predictions, &failures)?;
    w.predictions(&predictions)?;
    let metrics = classification_metrics(&predictions, &cfg.classification.positive_label)?;
    w.json("metrics.json", &metrics)?;
    let calibration = if predictions.iter().all(|p| p.confidence.is_some()) {
        let cal = ece(&predictions, cfg.eval.bins)?;
        w.json("calibration.json", &cal)?;
        Some(cal)
    } else {
        notes.push("calibration skipped: some predictions carry no confidence".into());
        None
    };
    w.done(
        notes,
        predictions,
        prompts,
        failures,
        Some(Metrics::Classification { metrics, calibration }),
    )
}

fn ensure_some_succeeded(predictions: &[PredictionRecord], failures: &[Failure]) -> Result<()> {
    if predictions.is_empty() {
        if let Some(f) = failures.first() {
            return Err(Error::Backend {
                failed: failures.len(),
                first: format!("{}: {}", f.id, f.error),
            });
        }
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// NER

fn ner(cfg: &PipelineConfig, stage: Stage) -> Result<RunOutcome> {
    let n = &cfg.ner;
    let scheme = MarkerScheme::new(n.marker_open.clone(), n.marker_close.clone())?;
    let docs = ingest_ner(&cfg.paths.corpus)?;
    if docs.is_empty() {
        return Err(Error::Validation(format!(
            "corpus {} is empty",
            cfg.paths.corpus.display()
        )));
    }
    let categories: Vec<String> = if n.categories.is_empty() {
        let set: std::collections::BTreeSet<String> = docs.iter().flat_map(|d| d.categories()).collect();
        set.into_iter().collect()
    } else {
        n.categories.clone()
    };
    if categories.is_empty() {
        return Err(Error::Validation("corpus has no entity categories".into()));
    }
    let parts = split(&docs, &split_spec(cfg))?;
    let eval = eval_set(cfg, &docs, &parts)?;
    let gateway = build_gateway(cfg, Gold::Ner(&docs, scheme.clone()))?;
    let mut counts = base_counts(docs.len(), &parts, eval.len());
    let mut failures = Vec::new();

    // one store per category: same inputs, category-specific marked targets
    let mut stores: BTreeMap<String, ExampleStore> = BTreeMap::new();
    if n.mode == Mode::FewShot {
        let shots = cfg.retrieval.shots;
        if parts.train.len() < shots {
            return Err(Error::Validation(format!(
                "train split has {} document(s), {shots} needed",
                parts.train.len()
            )));
        }
        let embeddings = if cfg.retrieval.strategy == RetrievalStrategy::Knn {
            let texts: Vec<String> = parts.train.iter().map(|d| d.doc.text.clone()).collect();
            Some(gateway.embed_batched(&texts, &cfg.backend.embedding_model, cfg.backend.embedding_batch)?)
        } else {
            None
        };
        for cat in &categories {
            let items = parts
                .train
                .iter()
                .map(|d| {
                    let target = encode_markers(&d.doc.text, &d.spans_of(cat), cat, &scheme)?;
                    Ok(ExampleItem::new(&d.doc.id, &d.doc.text, target))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut store = ExampleStore::new(items)?;
            if let Some(e) = &embeddings {
                store.set_embeddings(e.clone())?;
            }
            stores.insert(cat.clone(), store);
        }
    }
    let selector = Selector {
        cfg,
        k: cfg.retrieval.shots,
        per_label: None,
    };

    let planned: Vec<Vec<std::result::Result<PromptLogEntry, Failure>>> = gateway.map_bounded(&eval, |d| {
        let id = d.doc.id.as_str();
        if n.mode == Mode::FineTuned {
            let prompt = build_finetuned_prompt(&d.doc.text, &cfg.template);
            return categories
                .iter()
                .map(|c| log_entry(cfg, id, Some(c), Vec::new(), prompt.clone()))
                .collect();
        }
        let q = match query_embedding(cfg, &gateway, &d.doc.text) {
            Ok(q) => q,
            Err(e) => return categories.iter().map(|c| Err(failure(id, Some(c), &e))).collect(),
        };
        categories
            .iter()
            .map(|c| {
                let picked = selector
                    .pick(&stores[c], id, Some(c), q.as_ref())
                    .map_err(|e| failure(id, Some(c), e))?;
                let (ids, prompt) = fewshot_prompt(cfg, Some(ner_task_phrase(c)), &picked, &d.doc.text);
                log_entry(cfg, id, Some(c), ids, prompt)
            })
            .collect()
    });
    let jobs = split_results(planned.into_iter().flatten().collect(), &mut failures);
    counts.prompts = jobs.len();

    let mut w = Writer::new(cfg, stage, &gateway, counts, n.mode)?;
    w.prompts(&jobs)?;
    if stage == Stage::Prompts {
        w.failures(&failures)?;
        return w.done(Vec::new(), Vec::new(), jobs, failures, None);
    }

    let responses = execute(cfg, &gateway, &jobs, &stop_for(cfg, n.mode), false);
    let by_id: BTreeMap<&str, &NerDoc> = eval.iter().map(|d| (d.doc.id.as_str(), d)).collect();
    let mut decoded: BTreeMap<&str, (Vec<String>, Vec<EntitySpan>)> = BTreeMap::new();
    let mut anomalies = Vec::new();
    for (job, resp) in jobs.iter().zip(responses) {
        let cat = job.category.as_deref().expect("NER jobs carry a category");
        match resp {
            Ok(r) => {
                let doc = by_id[job.id.as_str()];
                let out = decode_markers(cfg.template.clean_completion(&r.text), &doc.doc.text, cat, &scheme);
                anomalies.extend(out.anomalies.into_iter().map(|a| AnomalyRecord {
                    id: job.id.clone(),
                    category: cat.to_string(),
                    kind: a.kind,
                    fragment: a.fragment,
                }));
                let slot = decoded.entry(job.id.as_str()).or_default();
                slot.0.push(cat.to_string());
                slot.1.extend(out.spans);
            }
            Err(e) => failures.push(failure(&job.id, Some(cat), e)),
        }
    }
    w.failures(&failures)?;

    let zero: BTreeMap<String, NerCounts> = categories.iter().map(|c| (c.clone(), NerCounts::default())).collect();
    let (mut exact, mut relaxed) = (zero.clone(), zero);
    let mut predictions = Vec::new();
    // eval order, not id order, so predictions.jsonl follows the evaluated split
    for d in &eval {
        let Some((done, spans)) = decoded.remove(d.doc.id.as_str()) else {
            continue;
        };
        let mut pred = spans;
        pred.sort();
        let gold: Vec<EntitySpan> = {
            let mut g: Vec<EntitySpan> = d.spans.iter().filter(|s| done.contains(&s.category)).cloned().collect();
            g.sort();
            g
        };
        for (acc, mode) in [(&mut exact, MatchMode::Exact), (&mut relaxed, MatchMode::Relaxed)] {
            for (cat, c) in ner_match(&gold, &pred, mode) {
                *acc.entry(cat).or_default() += c;
            }
        }
        predictions.push(PredictionRecord {
            id: d.doc.id.clone(),
            task: Task::Ner,
            predicted: Payload::Spans(pred),
            gold: Payload::Spans(gold),
            confidence: None,
        });
    }
    ensure_some_succeeded(&predictions, &failures)?;
    w.predictions(&predictions)?;
    let metrics = NerMetrics {
        headline: cfg.eval.match_mode,
        exact: ner_metrics(&exact),
        relaxed: ner_metrics(&relaxed),
        anomalies,
    };
    w.json("metrics.json", &metrics)?;
    w.done(Vec::new(), predictions, jobs, failures, Some(Metrics::Ner(metrics)))
}

// ---------------------------------------------------------------------------
// QA

fn qa(cfg: &PipelineConfig, stage: Stage) -> Result<RunOutcome> {
    let records = ingest_qa(&cfg.paths.corpus)?;
    if records.is_empty() {
        return Err(Error::Validation(format!(
            "corpus {} is empty",
            cfg.paths.corpus.display()
        )));
    }
    let sanitized = sanitize_qa(&records);
    let parts = split(&sanitized.clean, &split_spec(cfg))?;
    let eval = eval_set(cfg, &sanitized.clean, &parts)?;
    let gateway = build_gateway(cfg, Gold::Qa(&records))?;
    let mut counts = base_counts(records.len(), &parts, eval.len());
    counts.flagged = sanitized.flagged.len();
    let mut failures = Vec::new();

    let planned: Vec<_> = eval
        .iter()
        .map(|r| {
            let prompt = build_qa_prompt(&r.question, &r.context, cfg.qa.task_informed, &cfg.template);
            log_entry(cfg, &r.id, None, Vec::new(), prompt)
        })
        .collect();
    let jobs = split_results(planned, &mut failures);
    counts.prompts = jobs.len();

    let mut w = Writer::new(cfg, stage, &gateway, counts, Mode::ZeroShot)?;
    w.jsonl("flagged.jsonl", &sanitized.flagged)?;
    w.prompts(&jobs)?;
    if stage == Stage::Prompts {
        w.failures(&failures)?;
        return w.done(Vec::new(), Vec::new(), jobs, failures, None);
    }

    let gold: BTreeMap<&str, &str> = eval.iter().map(|r| (r.id.as_str(), r.gold_answer.as_str())).collect();
    let responses = execute(cfg, &gateway, &jobs, &stop_for(cfg, Mode::ZeroShot), false);
    let mut predictions = Vec::new();
    for (job, resp) in jobs.iter().zip(responses) {
        match resp {
            Ok(r) => predictions.push(PredictionRecord::text(
                Task::Qa,
                &job.id,
                cfg.template.clean_completion(&r.text),
                gold[job.id.as_str()],
            )),
            Err(e) => failures.push(failure(&job.id, None, e)),
        }
    }
    w.failures(&failures)?;
    ensure_some_succeeded(&predictions, &failures)?;
    w.predictions(&predictions)?;
    let metrics = qa_metrics(&predictions)?;
    let disagreements = disagreement_report(&predictions, cfg.eval.f1_threshold)?;
    w.json("metrics.json", &metrics)?;
    w.json("disagreements.json", &disagreements)?;
    w.done(
        Vec::new(),
        predictions,
        jobs,
        failures,
        Some(Metrics::Qa { metrics, disagreements }),
    )
}

// ---------------------------------------------------------------------------
// Output

struct Writer<'a> {
    cfg: &'a PipelineConfig,
    stage: Stage,
    gateway: &'a Gateway,
    counts: RunCounts,
    mode: Mode,
    outputs: Vec<String>,
}

impl<'a> Writer<'a> {
    fn new(cfg: &'a PipelineConfig, stage: Stage, gateway: &'a Gateway, counts: RunCounts, mode: Mode) -> Result<Self> {
        let dir = &cfg.paths.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Writer {
            cfg,
            stage,
            gateway,
            counts,
            mode,
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> std::path::PathBuf {
        self.outputs.push(name.to_string());
        self.cfg.paths.output_dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        write_json(&path, value)
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        let path = self.path(name);
        crate::corpus::write_jsonl(&path, items)
    }

    fn prompts(&mut self, jobs: &[PromptLogEntry]) -> Result<()> {
        self.jsonl("prompts.jsonl", jobs)
    }

    fn failures(&mut self, failures: &[Failure]) -> Result<()> {
        self.counts.failures = failures.len();
        self.jsonl("failures.jsonl", failures)
    }

    fn predictions(&mut self, preds: &[PredictionRecord]) -> Result<()> {
        self.counts.predictions = preds.len();
        self.jsonl("predictions.jsonl", preds)
    }

    fn done(
        mut self,
        notes: Vec<String>,
        predictions: Vec<PredictionRecord>,
        prompts: Vec<PromptLogEntry>,
        failures: Vec<Failure>,
        metrics: Option<Metrics>,
    ) -> Result<RunOutcome> {
        self.counts.completion_calls = self.gateway.calls_of(CallKind::Complete);
        self.counts.embedding_calls = self.gateway.calls_of(CallKind::Embed);
        self.outputs.push("manifest.json".into());
        self.outputs.sort();
        let manifest = Manifest {
            task: self.cfg.task,
            mode: self.mode,
            stage: match self.stage {
                Stage::Prompts => "build-prompts".into(),
                Stage::Full => "run".into(),
            },
            config_sha256: self.cfg.digest(),
            backend: self.gateway.identity(),
            seed: self.cfg.seed,
            counts: self.counts,
            outputs: self.outputs,
            notes,
        };
        write_json(&self.cfg.paths.output_dir.join("manifest.json"), &manifest)?;
        Ok(RunOutcome {
            manifest,
            predictions,
            prompts,
            failures,
            metrics,
        })
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
