//! LiveBackend against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mlpipe::gateway::{Backend, CompletionRequest, Gateway, GatewayError, LiveBackend, RetryPolicy};
use mlpipe::Error;

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: String,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` reply per connection, in order.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut len = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = v.trim().to_string(),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path: request_line.split_whitespace().nth(1).unwrap().to_string(),
                auth,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut s = stream;
            write!(
                s,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 5,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
    }
}

const OK_COMPLETION: &str =
    r#"{"choices":[{"text":" @@LiCoO2## and LiFePO4","finish_reason":"stop","logprobs":null}]}"#;

#[test]
fn retries_through_rate_limits() {
    let busy = r#"{"error":{"message":"rate limited"}}"#.to_string();
    let (base, seen) = serve(vec![(429, busy.clone()), (429, busy), (200, OK_COMPLETION.into())]);
    let backend = LiveBackend::new(&base, "sk-test").with_retry(fast_retry());
    let req = CompletionRequest::new("davinci", "LiCoO2 and LiFePO4\n\n###\n\n").with_stop(vec![" END".into()]);
    let resp = backend.complete(&req).unwrap();
    assert_eq!(resp.text, " @@LiCoO2## and LiFePO4");
    assert_eq!(backend.attempt_log(), vec![3]);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let first = &seen[0];
    assert_eq!(first.path, "/v1/completions");
    assert_eq!(first.auth, "Bearer sk-test");
    assert_eq!(first.body["temperature"], 0.0);
    assert_eq!(first.body["max_tokens"], 256);
    assert_eq!(first.body["top_p"], 1.0);
    assert_eq!(first.body["stop"][0], " END");
    assert!(first.body.get("trace").is_none());
}

#[test]
fn auth_failure_is_not_retried() {
    let (base, seen) = serve(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let gw = Gateway::new(LiveBackend::new(&base, "sk-wrong").with_retry(fast_retry()));
    let err = gw.complete(&CompletionRequest::new("m", "p")).unwrap_err();
    assert!(matches!(err, GatewayError::Auth { status: 401, .. }));
    assert_eq!(Error::from(err).exit_code(), 1);
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn exhausted_retries_map_to_backend_exit_code() {
    let script = (0..3).map(|_| (503, "{}".to_string())).collect();
    let (base, seen) = serve(script);
    let backend = LiveBackend::new(&base, "k").with_retry(RetryPolicy {
        max_attempts: 3,
        ..fast_retry()
    });
    let err = backend.complete(&CompletionRequest::new("m", "p")).unwrap_err();
    assert!(matches!(
        err,
        GatewayError::Exhausted {
            attempts: 3,
            status: Some(503),
            ..
        }
    ));
    assert_eq!(Error::from(err).exit_code(), 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn embeddings_endpoint() {
    let body = r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#;
    let (base, seen) = serve(vec![(200, body.into())]);
    let gw = Gateway::new(LiveBackend::new(&base, "k"));
    let v = gw.embed(&["a".into(), "b".into()], "text-embedding-ada-002").unwrap();
    assert_eq!(v[0].values(), &[1.0, 0.0]);
    assert_eq!(v[1].values(), &[0.0, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["input"][1], "b");
}
