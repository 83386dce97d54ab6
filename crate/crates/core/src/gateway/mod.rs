//! Completion and embedding access.
//!
//! [`Backend`] is implemented by [`LiveBackend`] (OpenAI-compatible REST) and
//! [`MockBackend`] (deterministic, in-process). [`Gateway`] wraps either one,
//! validates requests, keeps a call log and runs batches through a bounded
//! worker pool.

mod finetune;
mod limiter;
mod live;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;

pub use finetune::{
    export_finetune_jsonl, read_finetune_jsonl, recommended_finetune_config, ExportReport, FineTuneConfig,
    DEFAULT_EPOCHS,
};
pub use limiter::{shared_limiter, RateLimiter};
pub use live::{HttpReply, LiveBackend, RetryPolicy, Transport, UreqTransport};
pub use mock::{prompt_digest, ClassifyOracle, MockBackend, MockMode, NerOracle, QaOracle, NOT_MENTIONED_ANSWER};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("authentication failed (HTTP {status}): {message}")]
    Auth { status: u16, message: String },

    #[error("request failed after {attempts} attempt(s), last status {}: {message}", status.map_or("none".to_string(), |s| s.to_string()))]
    Exhausted {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },

    #[error("rejected request (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },

    #[error("malformed response: {0}")]
    Protocol(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("mock backend: {0}")]
    Mock(String),
}

/// Which record a request is for. Never sent over the wire; the mock oracles
/// use it to look up gold answers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestTrace {
    pub record_id: Option<String>,
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
    #[serde(skip)]
    pub want_logprobs: bool,
    #[serde(skip)]
    pub trace: RequestTrace,
}

impl CompletionRequest {
    /// Extraction defaults: temperature 0, 256 max tokens, top-p 1.
    pub fn new(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        CompletionRequest {
            model: model.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 256,
            top_p: 1.0,
            stop: None,
            want_logprobs: false,
            trace: RequestTrace::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} < 0",
                self.temperature
            )));
        }
        if self.max_tokens < 1 {
            return Err(GatewayError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        Ok(())
    }

    pub fn with_stop(mut self, stop: Vec<String>) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn with_logprobs(mut self) -> Self {
        self.want_logprobs = true;
        self
    }

    pub fn for_record(mut self, id: impl Into<String>, category: Option<&str>) -> Self {
        self.trace = RequestTrace {
            record_id: Some(id.into()),
            category: category.map(str::to_string),
        };
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    /// Alternatives at this position, most likely first.
    #[serde(default)]
    pub top: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub finish_reason: FinishReason,
}

pub trait Backend: Send + Sync {
    /// Short description recorded in run manifests, e.g. `mock:echo`.
    fn identity(&self) -> String;
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
    fn embed(&self, texts: &[String], model: &str) -> Result<Vec<EmbeddingVector>, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Complete,
    Embed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallRecord {
    pub kind: CallKind,
    pub inputs: usize,
    pub ok: bool,
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

pub struct Gateway {
    backend: Arc<dyn Backend>,
    max_in_flight: usize,
    log: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn Backend>) -> Self {
        Gateway {
            backend,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn identity(&self) -> String {
        self.backend.identity()
    }

    fn record(&self, kind: CallKind, inputs: usize, ok: bool) {
        self.log
            .lock()
            .expect("call log poisoned")
            .push(CallRecord { kind, inputs, ok });
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        let res = self.backend.complete(req);
        self.record(CallKind::Complete, 1, res.is_ok());
        res
    }

    /// One vector per text, in order, all of one dimension.
    pub fn embed(&self, texts: &[String], model: &str) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        let res = self.backend.embed(texts, model).and_then(|vecs| {
            if vecs.len() != texts.len() {
                return Err(GatewayError::Protocol(format!(
                    "{} embeddings returned for {} inputs",
                    vecs.len(),
                    texts.len()
                )));
            }
            if let Some(first) = vecs.first() {
                if vecs.iter().any(|v| v.dim() != first.dim()) {
                    return Err(GatewayError::Protocol("embeddings of mixed dimension".into()));
                }
            }
            Ok(vecs)
        });
        self.record(CallKind::Embed, texts.len(), res.is_ok());
        res
    }

    pub fn embed_one(&self, text: &str, model: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed(&[text.to_string()], model)?.remove(0))
    }

    /// Embeds in requests of at most `batch` texts.
    pub fn embed_batched(
        &self,
        texts: &[String],
        model: &str,
        batch: usize,
    ) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(batch.max(1)) {
            out.extend(self.embed(chunk, model)?);
        }
        Ok(out)
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }

    pub fn calls_of(&self, kind: CallKind) -> usize {
        self.call_log().iter().filter(|c| c.kind == kind).count()
    }

    /// Applies `f` to every item with at most `max_in_flight` concurrent calls;
    /// results come back in input order.
    pub fn map_bounded<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        let workers = self.max_in_flight.min(items.len());
        if workers <= 1 {
            return items.iter().map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let mut slots: Vec<(usize, R)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= items.len() {
                                break done;
                            }
                            done.push((i, f(&items[i])));
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        slots.sort_by_key(|(i, _)| *i);
        slots.into_iter().map(|(_, r)| r).collect()
    }
}
