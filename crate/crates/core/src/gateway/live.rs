//! OpenAI-compatible REST backend.
//!
//! `POST {base}/completions` with `model`, `prompt`, `temperature`,
//! `max_tokens`, `top_p`, `stop` and `logprobs`; `POST {base}/embeddings` with
//! `model` and `input`. HTTP 429 and 5xx replies and connection failures are
//! retried with capped exponential backoff and jitter. 401/403 is fatal, other
//! 4xx replies are returned as rejections without retrying.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Backend, CompletionRequest, CompletionResponse, FinishReason, GatewayError, RateLimiter, TokenLogprob};
use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::shuffle::SeededRng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// One JSON POST. `Err` means no HTTP reply was received at all.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: &str, body: &Value) -> std::result::Result<HttpReply, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        UreqTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, api_key: &str, body: &Value) -> std::result::Result<HttpReply, String> {
        let reply = self
            .agent
            .post(url)
            .set("Authorization", &format!("Bearer {api_key}"))
            .send_json(body.clone());
        match reply {
            Ok(resp) => {
                let status = resp.status();
                let body = resp.into_string().map_err(|e| e.to_string())?;
                Ok(HttpReply { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => Ok(HttpReply {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(t.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts per request, first try included.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`,
    /// capped, then scaled by a jitter factor in `[0.5, 1)`.
    fn delay(&self, attempt: u32, rng: &mut SeededRng) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << (attempt - 1).min(20));
        let capped = exp.min(self.max_delay);
        let jitter = 0.5 + (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 0.5;
        capped.mul_f64(jitter)
    }
}

pub struct LiveBackend {
    base_url: String,
    api_key: String,
    transport: Box<dyn Transport>,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    attempts: Mutex<Vec<u32>>,
}

impl LiveBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        LiveBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            transport: Box::new(UreqTransport::default()),
            retry: RetryPolicy::default(),
            limiter: None,
            attempts: Mutex::new(Vec::new()),
        }
    }

    /// Reads the API key from `var`; the key never comes from config files.
    pub fn from_env(base_url: impl Into<String>, var: &str) -> Result<Self> {
        match std::env::var(var) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(base_url, key.trim())),
            _ => Err(Error::Config(format!("environment variable {var} is not set"))),
        }
    }

    pub fn with_transport(mut self, transport: impl Transport + 'static) -> Self {
        self.transport = Box::new(transport);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    /// Joins the process-wide limiter for this backend's host.
    pub fn with_rate_limit(self, requests_per_second: f64) -> Self {
        let host = host_of(&self.base_url);
        let limiter = super::shared_limiter(&host, requests_per_second);
        self.with_limiter(limiter)
    }

    /// Attempts used by each finished request, in completion order.
    pub fn attempt_log(&self) -> Vec<u32> {
        self.attempts.lock().expect("attempt log poisoned").clone()
    }

    fn post(&self, path: &str, body: &Value) -> std::result::Result<Value, GatewayError> {
        let url = format!("{}/{}", self.base_url, path);
        let seed = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64);
        let mut rng = SeededRng::new(seed);
        let mut last_status = None;
        let mut last_message = String::new();
        let max = self.retry.max_attempts.max(1);

        for attempt in 1..=max {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.transport.post_json(&url, &self.api_key, body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    self.attempts.lock().expect("attempt log poisoned").push(attempt);
                    if attempt > 1 {
                        log::info!("{url}: succeeded after {attempt} attempts");
                    }
                    return serde_json::from_str(&reply.body)
                        .map_err(|e| GatewayError::Protocol(format!("{url}: {e}")));
                }
                Ok(reply) if reply.status == 401 || reply.status == 403 => {
                    self.attempts.lock().expect("attempt log poisoned").push(attempt);
                    return Err(GatewayError::Auth {
                        status: reply.status,
                        message: excerpt(&reply.body),
                    });
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    last_status = Some(reply.status);
                    last_message = excerpt(&reply.body);
                }
                Ok(reply) => {
                    self.attempts.lock().expect("attempt log poisoned").push(attempt);
                    return Err(GatewayError::Rejected {
                        status: reply.status,
                        message: excerpt(&reply.body),
                    });
                }
                Err(e) => {
                    last_status = None;
                    last_message = e;
                }
            }
            if attempt < max {
                let wait = self.retry.delay(attempt, &mut rng);
                log::warn!(
                    "{url}: attempt {attempt}/{max} failed ({}), retrying in {wait:?}",
                    last_status.map_or_else(|| last_message.clone(), |s| format!("HTTP {s}"))
                );
                std::thread::sleep(wait);
            }
        }
        self.attempts.lock().expect("attempt log poisoned").push(max);
        Err(GatewayError::Exhausted {
            attempts: max,
            status: last_status,
            message: last_message,
        })
    }
}

fn host_of(url: &str) -> String {
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    rest.split('/').next().unwrap_or(rest).to_string()
}

fn excerpt(body: &str) -> String {
    body.chars().take(300).collect()
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    finish_reason: Option<String>,
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<std::collections::BTreeMap<String, f64>>>>,
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

fn parse_completion(v: Value) -> std::result::Result<CompletionResponse, GatewayError> {
    let body: CompletionBody = serde_json::from_value(v).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let choice = body
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("stop") | None => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let token_logprobs = choice.logprobs.map(|lp| {
        let tops = lp.top_logprobs.unwrap_or_default();
        lp.tokens
            .into_iter()
            .zip(lp.token_logprobs)
            .enumerate()
            .map(|(i, (token, logprob))| {
                let mut top: Vec<(String, f64)> = tops
                    .get(i)
                    .cloned()
                    .flatten()
                    .map(|m| m.into_iter().collect())
                    .unwrap_or_default();
                top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                TokenLogprob {
                    token,
                    logprob: logprob.unwrap_or(f64::NEG_INFINITY),
                    top,
                }
            })
            .collect()
    });
    Ok(CompletionResponse {
        text: choice.text,
        token_logprobs,
        finish_reason,
    })
}

fn parse_embeddings(v: Value) -> std::result::Result<Vec<EmbeddingVector>, GatewayError> {
    let body: EmbeddingBody = serde_json::from_value(v).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let mut data: Vec<(usize, Vec<f64>)> = body
        .data
        .into_iter()
        .enumerate()
        .map(|(i, d)| (d.index.unwrap_or(i), d.embedding))
        .collect();
    data.sort_by_key(|(i, _)| *i);
    data.into_iter()
        .map(|(_, e)| EmbeddingVector::new(e).map_err(|e| GatewayError::Protocol(e.to_string())))
        .collect()
}

impl Backend for LiveBackend {
    fn identity(&self) -> String {
        format!("live:{}", self.base_url)
    }

    fn complete(&self, req: &CompletionRequest) -> std::result::Result<CompletionResponse, GatewayError> {
        let mut body = serde_json::to_value(req).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        if req.want_logprobs {
            body["logprobs"] = json!(5);
        }
        parse_completion(self.post("completions", &body)?)
    }

    fn embed(&self, texts: &[String], model: &str) -> std::result::Result<Vec<EmbeddingVector>, GatewayError> {
        let body = json!({ "model": model, "input": texts });
        parse_embeddings(self.post("embeddings", &body)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Replays canned replies and records every request body.
    struct Scripted {
        replies: Mutex<VecDeque<std::result::Result<HttpReply, String>>>,
        seen: Arc<Mutex<Vec<(String, Value)>>>,
    }

    type Seen = Arc<Mutex<Vec<(String, Value)>>>;

    impl Scripted {
        fn new(replies: Vec<std::result::Result<HttpReply, String>>) -> (Self, Seen) {
            let seen = Arc::new(Mutex::new(Vec::new()));
            (
                Scripted {
                    replies: Mutex::new(replies.into()),
                    seen: seen.clone(),
                },
                seen,
            )
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, url: &str, _key: &str, body: &Value) -> std::result::Result<HttpReply, String> {
            self.seen.lock().unwrap().push((url.to_string(), body.clone()));
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or(Err("script exhausted".into()))
        }
    }

    fn reply(status: u16, body: &str) -> std::result::Result<HttpReply, String> {
        Ok(HttpReply {
            status,
            body: body.into(),
        })
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        }
    }

    const OK_COMPLETION: &str = r#"{"choices":[{"text":" graphite","finish_reason":"stop"}]}"#;

    #[test]
    fn retries_429_then_succeeds() {
        let (t, seen) = Scripted::new(vec![
            reply(429, "slow down"),
            reply(429, "slow down"),
            reply(200, OK_COMPLETION),
        ]);
        let b = LiveBackend::new("http://h/v1/", "k")
            .with_transport(t)
            .with_retry(fast());
        let r = b.complete(&CompletionRequest::new("m", "p")).unwrap();
        assert_eq!(r.text, " graphite");
        assert_eq!(r.finish_reason, FinishReason::Stop);
        assert_eq!(b.attempt_log(), vec![3]);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert_eq!(seen[0].0, "http://h/v1/completions");
    }

    #[test]
    fn gives_up_at_attempt_cap() {
        let (t, seen) = Scripted::new(vec![reply(503, "down"); 10]);
        let b = LiveBackend::new("http://h", "k").with_transport(t).with_retry(fast());
        match b.complete(&CompletionRequest::new("m", "p")) {
            Err(GatewayError::Exhausted { attempts, status, .. }) => {
                assert_eq!(attempts, 4);
                assert_eq!(status, Some(503));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(seen.lock().unwrap().len(), 4);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let (t, seen) = Scripted::new(vec![reply(401, "bad key"), reply(200, OK_COMPLETION)]);
        let b = LiveBackend::new("http://h", "k").with_transport(t).with_retry(fast());
        assert!(matches!(
            b.complete(&CompletionRequest::new("m", "p")),
            Err(GatewayError::Auth { status: 401, .. })
        ));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn connection_errors_are_retried() {
        let (t, _) = Scripted::new(vec![Err("refused".into()), reply(200, OK_COMPLETION)]);
        let b = LiveBackend::new("http://h", "k").with_transport(t).with_retry(fast());
        assert!(b.complete(&CompletionRequest::new("m", "p")).is_ok());
        assert_eq!(b.attempt_log(), vec![2]);
    }

    #[test]
    fn malformed_body_is_protocol_error() {
        let (t, _) = Scripted::new(vec![reply(200, "{\"choices\": 3}")]);
        let b = LiveBackend::new("http://h", "k").with_transport(t).with_retry(fast());
        assert!(matches!(
            b.complete(&CompletionRequest::new("m", "p")),
            Err(GatewayError::Protocol(_))
        ));
    }

    #[test]
    fn request_body_and_logprobs() {
        let body = r#"{"choices":[{"text":" battery","finish_reason":"length","logprobs":{"tokens":[" battery"],"token_logprobs":[-0.1],"top_logprobs":[{" battery":-0.1," non":-2.4}]}}]}"#;
        let (t, seen) = Scripted::new(vec![reply(200, body)]);
        let b = LiveBackend::new("http://h", "k").with_transport(t);
        let req = CompletionRequest::new("text-davinci-003", "abc →")
            .with_stop(vec!["\n\n".into()])
            .with_logprobs();
        let r = b.complete(&req).unwrap();
        assert_eq!(r.finish_reason, FinishReason::Length);
        let lp = r.token_logprobs.unwrap();
        assert_eq!(lp[0].top[0], (" battery".to_string(), -0.1));
        assert_eq!(lp[0].top[1], (" non".to_string(), -2.4));
        let sent = &seen.lock().unwrap()[0].1;
        assert_eq!(sent["logprobs"], json!(5));
        assert_eq!(sent["stop"], json!(["\n\n"]));
        assert_eq!(sent["temperature"], json!(0.0));
    }

    #[test]
    fn embeddings_sorted_by_index() {
        let body = r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#;
        let (t, seen) = Scripted::new(vec![reply(200, body)]);
        let b = LiveBackend::new("http://h", "k").with_transport(t);
        let v = b.embed(&["a".into(), "b".into()], "text-embedding-ada-002").unwrap();
        assert_eq!(v[0].values(), &[1.0, 0.0]);
        let sent = &seen.lock().unwrap()[0];
        assert_eq!(sent.0, "http://h/embeddings");
        assert_eq!(sent.1, json!({"model":"text-embedding-ada-002","input":["a","b"]}));
    }

    #[test]
    fn missing_key_is_config_error() {
        let err = LiveBackend::from_env("http://h", "MLPIPE_TEST_SURELY_UNSET_KEY")
            .err()
            .unwrap();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn backoff_is_capped_and_jittered() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(1000),
        };
        let mut rng = SeededRng::new(0);
        for attempt in 1..10 {
            let d = p.delay(attempt, &mut rng);
            let ceiling = Duration::from_millis(100 * (1 << (attempt - 1))).min(Duration::from_millis(1000));
            assert!(d < ceiling && d >= ceiling / 2, "{attempt}: {d:?}");
        }
    }

    #[test]
    fn host_extraction() {
        assert_eq!(host_of("https://api.openai.com/v1"), "api.openai.com");
        assert_eq!(host_of("http://127.0.0.1:8080"), "127.0.0.1:8080");
    }
}
