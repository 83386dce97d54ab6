//! Deterministic in-process backend for offline runs and tests.
//!
//! Completion modes:
//! - `Echo`: returns the prompt minus a trailing suffix (default `"\n\n###\n\n"`);
//! - `Fixture`: looks up the SHA-256 hex digest of the prompt in a table;
//! - `Ner`, `Qa`, `Classify`: rule-based oracles that answer from gold
//!   annotations, keyed by the request's record trace. They refuse prompts that
//!   do not contain the record's text, so a pipeline that drops the query from
//!   its prompt fails loudly.
//!
//! Embeddings come from an optional exact-text fixture, falling back to signed
//! feature hashing of lower-cased alphanumeric tokens.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{Backend, CompletionRequest, CompletionResponse, FinishReason, GatewayError, TokenLogprob};
use crate::corpus::{read_jsonl, NerDoc, QaRecord};
use crate::embed::EmbeddingVector;
use crate::error::Result;
use crate::marker::{encode_markers, MarkerScheme};
use crate::prompt::ApproxTokenCounter;

/// Template for the oracle's "unanswerable" reply; `{}` is the asked-about entity.
pub const NOT_MENTIONED_ANSWER: &str = "the {} is not mentioned in the given text";

pub fn prompt_digest(prompt: &str) -> String {
    hex(&Sha256::digest(prompt.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Uniform in [0, 1) from a string, stable across platforms.
fn unit_from(key: &str, salt: u8) -> f64 {
    let mut h = Sha256::new();
    h.update([salt]);
    h.update(key.as_bytes());
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (x >> 11) as f64 / (1u64 << 53) as f64
}

fn record_id(req: &CompletionRequest) -> std::result::Result<&str, GatewayError> {
    req.trace
        .record_id
        .as_deref()
        .ok_or_else(|| GatewayError::Mock("oracle mode needs a record id on the request".into()))
}

fn require_in_prompt(req: &CompletionRequest, needle: &str, id: &str) -> std::result::Result<(), GatewayError> {
    if req.prompt.contains(needle) {
        Ok(())
    } else {
        Err(GatewayError::Mock(format!(
            "prompt for record {id:?} does not contain its text"
        )))
    }
}

pub struct NerOracle {
    docs: HashMap<String, NerDoc>,
    scheme: MarkerScheme,
    drop_every: Option<usize>,
}

impl NerOracle {
    /// Marks every gold span.
    pub fn perfect(docs: &[NerDoc], scheme: MarkerScheme) -> Self {
        NerOracle {
            docs: docs.iter().map(|d| (d.doc.id.clone(), d.clone())).collect(),
            scheme,
            drop_every: None,
        }
    }

    /// Marks gold spans but leaves out every `k`-th one (per document and
    /// category, in start order), so recall drops while precision stays 1.
    pub fn dropping_every(docs: &[NerDoc], scheme: MarkerScheme, k: usize) -> Self {
        NerOracle {
            drop_every: Some(k.max(1)),
            ..Self::perfect(docs, scheme)
        }
    }

    fn answer(&self, req: &CompletionRequest) -> std::result::Result<String, GatewayError> {
        let id = record_id(req)?;
        let doc = self
            .docs
            .get(id)
            .ok_or_else(|| GatewayError::Mock(format!("no gold document {id:?}")))?;
        require_in_prompt(req, &doc.doc.text, id)?;
        let category = req
            .trace
            .category
            .as_deref()
            .ok_or_else(|| GatewayError::Mock("NER oracle needs a category on the request".into()))?;
        let kept: Vec<_> = doc
            .spans_of(category)
            .into_iter()
            .enumerate()
            .filter(|(i, _)| self.drop_every.is_none_or(|k| (i + 1) % k != 0))
            .map(|(_, s)| s)
            .collect();
        let marked = encode_markers(&doc.doc.text, &kept, category, &self.scheme)
            .map_err(|e| GatewayError::Mock(e.to_string()))?;
        Ok(format!(" {marked}"))
    }
}

pub struct QaOracle {
    records: HashMap<String, QaRecord>,
    not_mentioned: HashSet<String>,
}

impl QaOracle {
    /// Answers with the gold answer, except for `not_mentioned` ids, which get an
    /// "X is not mentioned in the given text" reply.
    pub fn new(records: &[QaRecord], not_mentioned: impl IntoIterator<Item = String>) -> Self {
        QaOracle {
            records: records.iter().map(|r| (r.id.clone(), r.clone())).collect(),
            not_mentioned: not_mentioned.into_iter().collect(),
        }
    }

    fn answer(&self, req: &CompletionRequest) -> std::result::Result<String, GatewayError> {
        let id = record_id(req)?;
        let rec = self
            .records
            .get(id)
            .ok_or_else(|| GatewayError::Mock(format!("no gold QA record {id:?}")))?;
        require_in_prompt(req, &rec.context, id)?;
        require_in_prompt(req, &rec.question, id)?;
        if self.not_mentioned.contains(id) {
            return Ok(format!(
                " {}",
                NOT_MENTIONED_ANSWER.replace("{}", &question_subject(&rec.question))
            ));
        }
        Ok(format!(" {}", rec.gold_answer))
    }
}

/// "What is the anode material?" -> "anode".
fn question_subject(question: &str) -> String {
    let q = question.trim().trim_end_matches('?').trim().to_lowercase();
    let tail = q.rfind("the ").map_or(q.as_str(), |i| &q[i + 4..]);
    let tail = tail
        .strip_suffix(" materials")
        .or_else(|| tail.strip_suffix(" material"))
        .unwrap_or(tail)
        .trim();
    if tail.is_empty() {
        "answer".into()
    } else {
        tail.to_string()
    }
}

pub struct ClassifyOracle {
    gold: HashMap<String, (String, String)>,
    labels: Vec<String>,
    flip_fraction: f64,
}

impl ClassifyOracle {
    /// `gold` holds `(id, text, label)`. A deterministic `flip_fraction` of
    /// records (chosen by hashing the id) get a wrong label.
    pub fn new(
        gold: impl IntoIterator<Item = (String, String, String)>,
        labels: Vec<String>,
        flip_fraction: f64,
    ) -> Self {
        ClassifyOracle {
            gold: gold.into_iter().map(|(id, text, label)| (id, (text, label))).collect(),
            labels,
            flip_fraction,
        }
    }

    fn answer(&self, req: &CompletionRequest) -> std::result::Result<(String, Vec<TokenLogprob>), GatewayError> {
        let id = record_id(req)?;
        let (text, label) = self
            .gold
            .get(id)
            .ok_or_else(|| GatewayError::Mock(format!("no gold label for {id:?}")))?;
        require_in_prompt(req, text, id)?;
        let mut answer = label.clone();
        if unit_from(id, 2) < self.flip_fraction {
            if let Some(other) = self.labels.iter().find(|l| *l != label) {
                answer = other.clone();
            }
        }
        // probability mass on the emitted label, in [0.55, 0.99)
        let p = 0.55 + 0.44 * unit_from(id, 1);
        let others: Vec<&String> = self.labels.iter().filter(|l| **l != answer).collect();
        let rest = if others.is_empty() {
            0.0
        } else {
            (1.0 - p) / others.len() as f64
        };
        let token = format!(" {answer}");
        let mut top = vec![(token.clone(), libm::log(p))];
        top.extend(others.into_iter().map(|l| (format!(" {l}"), libm::log(rest))));
        Ok((
            token.clone(),
            vec![TokenLogprob {
                token,
                logprob: libm::log(p),
                top,
            }],
        ))
    }
}

pub enum MockMode {
    Echo { suffix: String },
    Fixture(HashMap<String, String>),
    Ner(NerOracle),
    Qa(QaOracle),
    Classify(ClassifyOracle),
}

pub struct MockBackend {
    mode: MockMode,
    dim: usize,
    embedding_fixture: HashMap<String, EmbeddingVector>,
}

#[derive(Deserialize)]
struct FixtureLine {
    prompt_digest: String,
    completion: String,
}

#[derive(Deserialize)]
struct EmbeddingFixtureLine {
    text: String,
    embedding: EmbeddingVector,
}

impl MockBackend {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(mode: MockMode) -> Self {
        MockBackend {
            mode,
            dim: Self::DEFAULT_DIM,
            embedding_fixture: HashMap::new(),
        }
    }

    pub fn echo() -> Self {
        Self::new(MockMode::Echo {
            suffix: "\n\n###\n\n".into(),
        })
    }

    pub fn fixture(table: HashMap<String, String>) -> Self {
        Self::new(MockMode::Fixture(table))
    }

    /// Loads `{"prompt_digest": ..., "completion": ...}` lines.
    pub fn load_fixture(path: &Path) -> Result<Self> {
        let table = read_jsonl::<FixtureLine>(path)?
            .into_iter()
            .map(|(_, l)| (l.prompt_digest, l.completion))
            .collect();
        Ok(Self::fixture(table))
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    pub fn with_embeddings(mut self, table: HashMap<String, EmbeddingVector>) -> Self {
        self.embedding_fixture.extend(table);
        self
    }

    /// Loads `{"text": ..., "embedding": [...]}` lines.
    pub fn load_embeddings(self, path: &Path) -> Result<Self> {
        let table = read_jsonl::<EmbeddingFixtureLine>(path)?
            .into_iter()
            .map(|(_, l)| (l.text, l.embedding))
            .collect();
        Ok(self.with_embeddings(table))
    }

    /// Signed feature hashing of lower-cased alphanumeric tokens into `dim` slots.
    /// Texts without any such token hash to the zero vector.
    pub fn hash_embedding(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lowered = text.to_lowercase();
        for token in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let d = Sha256::digest(token.as_bytes());
            let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
            let slot = (x % self.dim as u64) as usize;
            v[slot] += if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        }
        v
    }

    fn raw_completion(
        &self,
        req: &CompletionRequest,
    ) -> std::result::Result<(String, Option<Vec<TokenLogprob>>), GatewayError> {
        Ok(match &self.mode {
            MockMode::Echo { suffix } => {
                let text = req.prompt.strip_suffix(suffix.as_str()).unwrap_or(&req.prompt);
                (text.to_string(), None)
            }
            MockMode::Fixture(table) => {
                let digest = prompt_digest(&req.prompt);
                let text = table
                    .get(&digest)
                    .ok_or_else(|| GatewayError::Mock(format!("no fixture for prompt digest {digest}")))?;
                (text.clone(), None)
            }
            MockMode::Ner(o) => (o.answer(req)?, None),
            MockMode::Qa(o) => (o.answer(req)?, None),
            MockMode::Classify(o) => {
                let (text, lp) = o.answer(req)?;
                (text, Some(lp))
            }
        })
    }
}

impl Backend for MockBackend {
    fn identity(&self) -> String {
        match &self.mode {
            MockMode::Echo { .. } => "mock:echo".into(),
            MockMode::Fixture(t) => format!("mock:fixture({} prompts)", t.len()),
            MockMode::Ner(o) => match o.drop_every {
                None => "mock:ner-oracle".into(),
                Some(k) => format!("mock:ner-oracle(drop-every-{k})"),
            },
            MockMode::Qa(o) => format!("mock:qa-oracle({} not-mentioned)", o.not_mentioned.len()),
            MockMode::Classify(o) => format!("mock:classify-oracle(flip={})", o.flip_fraction),
        }
    }

    fn complete(&self, req: &CompletionRequest) -> std::result::Result<CompletionResponse, GatewayError> {
        let (mut text, mut logprobs) = self.raw_completion(req)?;
        let mut finish_reason = FinishReason::Stop;

        if let Some(stops) = &req.stop {
            let cut = stops
                .iter()
                .filter(|s| !s.is_empty())
                .filter_map(|s| text.find(s.as_str()))
                .min();
            if let Some(at) = cut {
                text.truncate(at);
            }
        }
        let ends = ApproxTokenCounter::token_ends(&text);
        if ends.len() > req.max_tokens as usize {
            text.truncate(ends[req.max_tokens as usize - 1]);
            finish_reason = FinishReason::Length;
        }
        if req.want_logprobs && logprobs.is_none() {
            let mut start = 0;
            logprobs = Some(
                ApproxTokenCounter::token_ends(&text)
                    .into_iter()
                    .map(|end| {
                        let token = text[start..end].to_string();
                        start = end;
                        TokenLogprob {
                            top: vec![(token.clone(), 0.0)],
                            token,
                            logprob: 0.0,
                        }
                    })
                    .collect(),
            );
        } else if !req.want_logprobs {
            logprobs = None;
        }
        Ok(CompletionResponse {
            text,
            token_logprobs: logprobs,
            finish_reason,
        })
    }

    fn embed(&self, texts: &[String], _model: &str) -> std::result::Result<Vec<EmbeddingVector>, GatewayError> {
        texts
            .iter()
            .map(|t| match self.embedding_fixture.get(t) {
                Some(v) => Ok(v.clone()),
                None => EmbeddingVector::new(self.hash_embedding(t)).map_err(|e| GatewayError::Mock(e.to_string())),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, EntitySpan};

    #[test]
    fn echo_strips_suffix() {
        let m = MockBackend::echo();
        let r = m.complete(&CompletionRequest::new("m", "abc\n\n###\n\n")).unwrap();
        assert_eq!(r.text, "abc");
        assert_eq!(r.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn fixture_is_deterministic_and_strict() {
        let table = HashMap::from([(prompt_digest("hello"), " canned".to_string())]);
        let m = MockBackend::fixture(table);
        let a = m.complete(&CompletionRequest::new("m", "hello")).unwrap();
        let b = m.complete(&CompletionRequest::new("m", "hello")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.text, " canned");
        assert!(m.complete(&CompletionRequest::new("m", "other")).is_err());
    }

    #[test]
    fn digest_is_sha256_hex() {
        assert_eq!(
            prompt_digest("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn stop_and_length() {
        let m = MockBackend::echo();
        let req = CompletionRequest::new("m", "alpha beta END gamma").with_stop(vec![" END".into()]);
        assert_eq!(m.complete(&req).unwrap().text, "alpha beta");
        let mut req = CompletionRequest::new("m", "one two three four");
        req.max_tokens = 2;
        let r = m.complete(&req).unwrap();
        assert_eq!(r.text, "one two");
        assert_eq!(r.finish_reason, FinishReason::Length);
    }

    #[test]
    fn hashing_embeddings_are_deterministic() {
        let m = MockBackend::echo();
        let a = m
            .embed(&["LiFePO4 cathode".into(), "LiFePO4 cathode".into()], "e")
            .unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[0].dim(), MockBackend::DEFAULT_DIM);
    }

    #[test]
    fn embedding_fixture_wins() {
        let v = EmbeddingVector::new(vec![1.0, 2.0]).unwrap();
        let m = MockBackend::echo().with_embeddings(HashMap::from([("battery".to_string(), v.clone())]));
        assert_eq!(m.embed(&["battery".into()], "e").unwrap()[0], v);
    }

    fn ner_doc() -> NerDoc {
        let text = "Fe and Co and Ni films";
        NerDoc {
            doc: Document::new("d1", text),
            spans: vec![
                EntitySpan::from_text(text, 0, 2, "MAT").unwrap(),
                EntitySpan::from_text(text, 7, 9, "MAT").unwrap(),
                EntitySpan::from_text(text, 14, 16, "MAT").unwrap(),
            ],
        }
    }

    #[test]
    fn ner_oracle_marks_and_drops() {
        let d = ner_doc();
        let perfect = MockBackend::new(MockMode::Ner(NerOracle::perfect(
            std::slice::from_ref(&d),
            MarkerScheme::default(),
        )));
        let req = CompletionRequest::new("m", format!("{}\n\n###\n\n", d.doc.text)).for_record("d1", Some("MAT"));
        assert_eq!(
            perfect.complete(&req).unwrap().text,
            " @@Fe## and @@Co## and @@Ni## films"
        );
        let dropped = MockBackend::new(MockMode::Ner(NerOracle::dropping_every(
            &[d],
            MarkerScheme::default(),
            2,
        )));
        assert_eq!(dropped.complete(&req).unwrap().text, " @@Fe## and Co and @@Ni## films");
        let wrong = CompletionRequest::new("m", "unrelated").for_record("d1", Some("MAT"));
        assert!(perfect.complete(&wrong).is_err());
    }

    #[test]
    fn qa_oracle_not_mentioned() {
        let rec = QaRecord {
            id: "q1".into(),
            question: "What is the anode material?".into(),
            context: "A nano-meshed cathode was used.".into(),
            gold_answer: "nano-meshed".into(),
            answer_start: None,
        };
        let m = MockBackend::new(MockMode::Qa(QaOracle::new(
            std::slice::from_ref(&rec),
            ["q1".to_string()],
        )));
        let prompt = crate::prompt::build_qa_prompt(&rec.question, &rec.context, true, &Default::default());
        let r = m
            .complete(&CompletionRequest::new("m", prompt).for_record("q1", None))
            .unwrap();
        assert_eq!(r.text, " the anode is not mentioned in the given text");
    }

    #[test]
    fn classify_oracle_logprobs_normalised() {
        let o = ClassifyOracle::new(
            [("a".to_string(), "text a".to_string(), "battery".to_string())],
            vec!["battery".into(), "non-battery".into()],
            0.0,
        );
        let m = MockBackend::new(MockMode::Classify(o));
        let r = m
            .complete(
                &CompletionRequest::new("m", "text a →")
                    .for_record("a", None)
                    .with_logprobs(),
            )
            .unwrap();
        assert_eq!(r.text, " battery");
        let lp = &r.token_logprobs.unwrap()[0];
        let mass: f64 = lp.top.iter().map(|(_, l)| l.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }
}
