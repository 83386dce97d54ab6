//! Task corpora: data model, JSONL ingestion, QA sanitization and seeded splits.
//!
//! Each corpus is one JSON object per line (UTF-8). Blank lines are skipped but
//! still counted, so error line numbers match what an editor shows.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::shuffle;
use crate::text::{char_len, char_slice};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifiedDoc {
    pub doc: Document,
    pub label: String,
}

/// Half-open `[start, end)` character span tagged with an entity category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub category: String,
    #[serde(default)]
    pub surface: String,
}

impl EntitySpan {
    /// Builds a span and fills `surface` from `text`; `None` if the range is invalid.
    pub fn from_text(text: &str, start: usize, end: usize, category: impl Into<String>) -> Option<Self> {
        if start >= end {
            return None;
        }
        let surface = char_slice(text, start, end)?.to_string();
        Some(EntitySpan {
            start,
            end,
            category: category.into(),
            surface,
        })
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NerDoc {
    pub doc: Document,
    pub spans: Vec<EntitySpan>,
}

impl NerDoc {
    /// Spans of one category, sorted by start.
    pub fn spans_of(&self, category: &str) -> Vec<EntitySpan> {
        let mut out: Vec<EntitySpan> = self.spans.iter().filter(|s| s.category == category).cloned().collect();
        out.sort();
        out
    }

    /// Categories present in this document, sorted.
    pub fn categories(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = self.spans.iter().map(|s| s.category.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub context: String,
    #[serde(rename = "answer")]
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_start: Option<usize>,
}

/// Seed plus `(train, val, test)` ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl SplitSpec {
    pub fn new(seed: u64, ratios: [f64; 3]) -> Result<Self> {
        let spec = SplitSpec { seed, ratios };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Validation(format!(
                "split ratios must be finite and non-negative, got {:?}",
                self.ratios
            )));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Partitions `records` after a seeded shuffle.
///
/// Validation and test sizes are `round(n * ratio)`; whatever is left goes to
/// train. The shuffled order is kept inside each part: train takes the head,
/// then val, then test.
pub fn split<T: Clone>(records: &[T], spec: &SplitSpec) -> Result<Split<T>> {
    spec.validate()?;
    let n = records.len();
    let n_val = ((n as f64 * spec.ratios[1]).round() as usize).min(n);
    let n_test = ((n as f64 * spec.ratios[2]).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;

    let order = shuffle::permutation(n, spec.seed);
    let take = |range: std::ops::Range<usize>| -> Vec<T> { order[range].iter().map(|&i| records[i].clone()).collect() };
    Ok(Split {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    })
}

// ---------------------------------------------------------------------------
// JSONL plumbing

/// Reads one JSON value per non-blank line, returning `(line_number, value)`.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn invalid(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("{}: line {line}: {msg}", path.display()))
}

struct IdGuard<'a> {
    path: &'a Path,
    seen: HashMap<String, usize>,
}

impl<'a> IdGuard<'a> {
    fn new(path: &'a Path) -> Self {
        IdGuard {
            path,
            seen: HashMap::new(),
        }
    }

    fn check(&mut self, id: &str, line: usize) -> Result<()> {
        if id.is_empty() {
            return Err(invalid(self.path, line, "empty id"));
        }
        if let Some(first) = self.seen.insert(id.to_string(), line) {
            return Err(invalid(
                self.path,
                line,
                format!("duplicate id \"{id}\" (first seen on line {first})"),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ClassificationLine {
    id: String,
    text: String,
    label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct SpanLine {
    start: usize,
    end: usize,
    category: String,
}

#[derive(Serialize, Deserialize)]
struct NerLine {
    id: String,
    text: String,
    spans: Vec<SpanLine>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

/// Loads a classification corpus. When `labels` is given, every record's label
/// must be one of them.
pub fn ingest_classification(path: &Path, labels: Option<&[String]>) -> Result<Vec<ClassifiedDoc>> {
    let mut ids = IdGuard::new(path);
    let mut out = Vec::new();
    for (line, rec) in read_jsonl::<ClassificationLine>(path)? {
        ids.check(&rec.id, line)?;
        if rec.text.is_empty() {
            return Err(invalid(path, line, format!("record \"{}\" has empty text", rec.id)));
        }
        if let Some(allowed) = labels {
            if !allowed.contains(&rec.label) {
                return Err(invalid(
                    path,
                    line,
                    format!("unknown label \"{}\" (allowed: {})", rec.label, allowed.join(", ")),
                ));
            }
        }
        out.push(ClassifiedDoc {
            doc: Document {
                id: rec.id,
                text: rec.text,
                meta: rec.meta,
            },
            label: rec.label,
        });
    }
    Ok(out)
}

/// Checks the span invariants of one document; error messages name the span index.
pub fn validate_spans(text: &str, spans: &[EntitySpan]) -> std::result::Result<(), String> {
    let len = char_len(text);
    for (i, s) in spans.iter().enumerate() {
        if s.start >= s.end || s.end > len {
            return Err(format!(
                "span {i} ({}, {}) out of range for text of length {len}",
                s.start, s.end
            ));
        }
        let surface = char_slice(text, s.start, s.end).unwrap_or_default();
        if surface != s.surface {
            return Err(format!(
                "span {i} surface {:?} does not match text {:?}",
                s.surface, surface
            ));
        }
    }
    for (i, a) in spans.iter().enumerate() {
        for (j, b) in spans.iter().enumerate().skip(i + 1) {
            if a.category == b.category && a.overlaps(b) {
                return Err(format!("spans {i} and {j} overlap within category {}", a.category));
            }
        }
    }
    Ok(())
}

pub fn ingest_ner(path: &Path) -> Result<Vec<NerDoc>> {
    let mut ids = IdGuard::new(path);
    let mut out = Vec::new();
    for (line, rec) in read_jsonl::<NerLine>(path)? {
        ids.check(&rec.id, line)?;
        if rec.text.is_empty() {
            return Err(invalid(path, line, format!("record \"{}\" has empty text", rec.id)));
        }
        let len = char_len(&rec.text);
        let mut spans = Vec::with_capacity(rec.spans.len());
        for (i, s) in rec.spans.into_iter().enumerate() {
            let span = EntitySpan::from_text(&rec.text, s.start, s.end, s.category).ok_or_else(|| {
                invalid(
                    path,
                    line,
                    format!(
                        "span {i} ({}, {}) out of range for text of length {len}",
                        s.start, s.end
                    ),
                )
            })?;
            spans.push(span);
        }
        validate_spans(&rec.text, &spans).map_err(|m| invalid(path, line, m))?;
        out.push(NerDoc {
            doc: Document {
                id: rec.id,
                text: rec.text,
                meta: rec.meta,
            },
            spans,
        });
    }
    Ok(out)
}

pub fn check_answer_start(rec: &QaRecord) -> std::result::Result<(), String> {
    if let Some(start) = rec.answer_start {
        let end = start + char_len(&rec.gold_answer);
        match char_slice(&rec.context, start, end) {
            Some(s) if s == rec.gold_answer => {}
            found => {
                return Err(format!(
                    "answer_start {start} points at {:?}, expected {:?}",
                    found.unwrap_or("<out of range>"),
                    rec.gold_answer
                ))
            }
        }
    }
    Ok(())
}

pub fn ingest_qa(path: &Path) -> Result<Vec<QaRecord>> {
    let mut ids = IdGuard::new(path);
    let mut out = Vec::new();
    for (line, rec) in read_jsonl::<QaRecord>(path)? {
        ids.check(&rec.id, line)?;
        check_answer_start(&rec).map_err(|m| invalid(path, line, m))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_classification(path: &Path, docs: &[ClassifiedDoc]) -> Result<()> {
    let lines: Vec<ClassificationLine> = docs
        .iter()
        .map(|d| ClassificationLine {
            id: d.doc.id.clone(),
            text: d.doc.text.clone(),
            label: d.label.clone(),
            meta: d.doc.meta.clone(),
        })
        .collect();
    write_jsonl(path, &lines)
}

pub fn write_ner(path: &Path, docs: &[NerDoc]) -> Result<()> {
    let lines: Vec<NerLine> = docs
        .iter()
        .map(|d| NerLine {
            id: d.doc.id.clone(),
            text: d.doc.text.clone(),
            spans: d
                .spans
                .iter()
                .map(|s| SpanLine {
                    start: s.start,
                    end: s.end,
                    category: s.category.clone(),
                })
                .collect(),
            meta: d.doc.meta.clone(),
        })
        .collect();
    write_jsonl(path, &lines)
}

pub fn write_qa(path: &Path, records: &[QaRecord]) -> Result<()> {
    write_jsonl(path, records)
}

// ---------------------------------------------------------------------------
// QA sanitization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagReason {
    Duplicate,
    AnswerNotInContext,
}

impl std::fmt::Display for FlagReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlagReason::Duplicate => "duplicate",
            FlagReason::AnswerNotInContext => "answer-not-in-context",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlaggedRecord {
    pub record: QaRecord,
    pub reason: FlagReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sanitized {
    pub clean: Vec<QaRecord>,
    pub flagged: Vec<FlaggedRecord>,
}

/// Flags repeated `(question, context)` pairs after the first (compared in NFC)
/// and records whose answer does not occur in their context. Nothing is dropped
/// silently: every input lands in exactly one of `clean` or `flagged`.
pub fn sanitize_qa(records: &[QaRecord]) -> Sanitized {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut out = Sanitized::default();
    for rec in records {
        let question: String = rec.question.nfc().collect();
        let context: String = rec.context.nfc().collect();
        let answer: String = rec.gold_answer.nfc().collect();
        let reason = if !seen.insert((question, context.clone())) {
            Some(FlagReason::Duplicate)
        } else if !context.contains(&answer) {
            Some(FlagReason::AnswerNotInContext)
        } else {
            None
        };
        match reason {
            Some(reason) => out.flagged.push(FlaggedRecord {
                record: rec.clone(),
                reason,
            }),
            None => out.clean.push(rec.clone()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn qa(id: &str, q: &str, c: &str, a: &str) -> QaRecord {
        QaRecord {
            id: id.into(),
            question: q.into(),
            context: c.into(),
            gold_answer: a.into(),
            answer_start: None,
        }
    }

    #[test]
    fn classification_line_maps_fields() {
        let f = file_with(&[r#"{"id":"a1","text":"Li-ion anodes...","label":"battery"}"#]);
        let docs = ingest_classification(f.path(), None).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].doc.id, "a1");
        assert_eq!(docs[0].doc.text, "Li-ion anodes...");
        assert_eq!(docs[0].label, "battery");
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = file_with(&[]);
        assert!(ingest_classification(f.path(), None).unwrap().is_empty());
        assert!(ingest_ner(f.path()).unwrap().is_empty());
        assert!(ingest_qa(f.path()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_names_id_and_line() {
        let f = file_with(&[
            r#"{"id":"a1","text":"x","label":"battery"}"#,
            r#"{"id":"a1","text":"y","label":"battery"}"#,
        ]);
        let msg = ingest_classification(f.path(), None).unwrap_err().to_string();
        assert!(msg.contains("\"a1\""), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = file_with(&[r#"{"id":"a1","text":"x","label":"battery"}"#, "{not json"]);
        match ingest_classification(f.path(), None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_label_rejected_when_declared() {
        let f = file_with(&[r#"{"id":"a1","text":"x","label":"solar"}"#]);
        let labels = vec!["battery".to_string(), "non-battery".to_string()];
        assert!(ingest_classification(f.path(), Some(&labels)).is_err());
        assert!(ingest_classification(f.path(), None).is_ok());
    }

    #[test]
    fn ner_surface_is_offset_slice() {
        let f = file_with(&[r#"{"id":"n1","text":"BaTiO₃ film","spans":[{"start":0,"end":6,"category":"MAT"}]}"#]);
        let docs = ingest_ner(f.path()).unwrap();
        assert_eq!(docs[0].spans[0].surface, "BaTiO₃");
    }

    #[test]
    fn ner_same_category_overlap_rejected() {
        let f = file_with(&[
            r#"{"id":"n1","text":"BaTiO₃ film on Si","spans":[{"start":0,"end":6,"category":"MAT"},{"start":3,"end":9,"category":"MAT"}]}"#,
        ]);
        let msg = ingest_ner(f.path()).unwrap_err().to_string();
        assert!(msg.contains("overlap"), "{msg}");
    }

    #[test]
    fn ner_cross_category_overlap_allowed() {
        let f = file_with(&[
            r#"{"id":"n1","text":"BaTiO₃ film on Si","spans":[{"start":0,"end":6,"category":"MAT"},{"start":0,"end":11,"category":"DSC"}]}"#,
        ]);
        assert!(ingest_ner(f.path()).is_ok());
    }

    #[test]
    fn ner_span_out_of_range_names_index() {
        let f = file_with(&[r#"{"id":"n1","text":"0123456789","spans":[{"start":0,"end":99,"category":"MAT"}]}"#]);
        let msg = ingest_ner(f.path()).unwrap_err().to_string();
        assert!(msg.contains("span 0"), "{msg}");
        assert!(msg.contains("out of range"), "{msg}");
    }

    #[test]
    fn qa_answer_start_checked() {
        let ok = file_with(&[
            r#"{"id":"q1","question":"What is the anode?","context":"The anode is graphite.","answer":"graphite","answer_start":13}"#,
        ]);
        assert_eq!(ingest_qa(ok.path()).unwrap().len(), 1);
        let bad = file_with(&[
            r#"{"id":"q1","question":"What is the anode?","context":"The anode is graphite.","answer":"graphite","answer_start":4}"#,
        ]);
        assert!(ingest_qa(bad.path()).is_err());
    }

    #[test]
    fn sanitize_flags_second_duplicate() {
        let recs = vec![
            qa("1", "What is the anode?", "The anode is Li.", "Li"),
            qa("2", "What is the anode?", "The anode is Li.", "Li"),
        ];
        let s = sanitize_qa(&recs);
        assert_eq!(s.clean, vec![recs[0].clone()]);
        assert_eq!(s.flagged.len(), 1);
        assert_eq!(s.flagged[0].record.id, "2");
        assert_eq!(s.flagged[0].reason, FlagReason::Duplicate);
    }

    #[test]
    fn sanitize_duplicate_key_is_nfc() {
        // "é" precomposed vs e + combining acute
        let recs = vec![
            qa("1", "Which phase?", "caf\u{e9} phase", "phase"),
            qa("2", "Which phase?", "cafe\u{301} phase", "phase"),
        ];
        assert_eq!(sanitize_qa(&recs).flagged.len(), 1);
    }

    #[test]
    fn sanitize_flags_answer_missing_from_context() {
        let ctx = "A nano-meshed cathode was paired with a liquid electrolyte.";
        let recs = vec![
            qa("1", "What is the anode?", ctx, "nano-meshed"),
            qa("2", "What is the anode?", "The cathode is LiCoO2.", "nano-meshed"),
        ];
        // substring-search oracle
        let expected: Vec<bool> = recs.iter().map(|r| !r.context.contains(&r.gold_answer)).collect();
        let s = sanitize_qa(&recs);
        assert_eq!(expected, vec![false, true]);
        assert_eq!(s.flagged.len(), 1);
        assert_eq!(s.flagged[0].record.id, "2");
        assert_eq!(s.flagged[0].reason, FlagReason::AnswerNotInContext);
        assert_eq!(s.flagged[0].reason.to_string(), "answer-not-in-context");
    }

    #[test]
    fn sanitize_keeps_unique_well_formed() {
        let recs = vec![qa("1", "What is the electrolyte?", "We used LiPF6 in EC.", "LiPF6")];
        let s = sanitize_qa(&recs);
        assert_eq!(s.clean, recs);
        assert!(s.flagged.is_empty());
    }

    #[test]
    fn split_sizes_and_partition() {
        let recs: Vec<u32> = (0..10).collect();
        let spec = SplitSpec::new(42, [0.8, 0.1, 0.1]).unwrap();
        let s = split(&recs, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let mut all: Vec<u32> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, recs);
    }

    #[test]
    fn split_all_train_keeps_shuffled_order() {
        let recs: Vec<u32> = (0..20).collect();
        let spec = SplitSpec::new(9, [1.0, 0.0, 0.0]).unwrap();
        let s = split(&recs, &spec).unwrap();
        let expected: Vec<u32> = shuffle::permutation(20, 9).into_iter().map(|i| i as u32).collect();
        assert_eq!(s.train, expected);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn split_is_deterministic() {
        let recs: Vec<String> = (0..57).map(|i| format!("r{i}")).collect();
        let spec = SplitSpec::new(1234, [0.7, 0.15, 0.15]).unwrap();
        assert_eq!(split(&recs, &spec).unwrap(), split(&recs, &spec).unwrap());
    }

    #[test]
    fn split_remainder_never_overflows() {
        let spec = SplitSpec::new(0, [0.0, 0.5, 0.5]).unwrap();
        let s = split(&[1], &spec).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 1);
    }

    #[test]
    fn split_spec_rejects_bad_ratios() {
        assert!(SplitSpec::new(0, [0.5, 0.5, 0.5]).is_err());
        assert!(SplitSpec::new(0, [1.2, -0.1, -0.1]).is_err());
        assert!(SplitSpec::new(0, [0.8, 0.1, 0.1 + 1e-12]).is_ok());
    }
}
