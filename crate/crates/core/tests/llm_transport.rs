mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::StubServer;
use serde_json::{json, Value};
use vulnprompt_core::llmclient::{
    ChatReply, ChatRequest, ChatTransport, HttpTransport, LlmClient, LlmConfig, LlmError,
    RetryPolicy, TransportFailure,
};

fn fast_config() -> LlmConfig {
    LlmConfig {
        retry: RetryPolicy {
            max_attempts: 4,
            backoff_base_ms: 1,
            backoff_max_ms: 5,
        },
        ..LlmConfig::default()
    }
}

fn completion(text: &str) -> String {
    json!({
        "choices": [{ "message": { "role": "assistant", "content": text } }],
        "usage": { "prompt_tokens": 12, "completion_tokens": 3 }
    })
    .to_string()
}

#[test]
fn live_transport_retries_rate_limits() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::clone(&calls);
    let server = StubServer::start(move |req| {
        assert_eq!(req.path, "/v1/chat/completions");
        if seen.fetch_add(1, Ordering::SeqCst) < 2 {
            (429, "{\"error\":\"slow down\"}".into())
        } else {
            (200, completion("No. The length is checked."))
        }
    });
    let transport = HttpTransport::new(
        &format!("{}/v1", server.base),
        Some("sk-test".into()),
        Duration::from_secs(5),
    )
    .unwrap();
    let client = LlmClient::with_transport(fast_config(), Arc::new(transport)).unwrap();
    let resp = client.detect("Is it buggy?").unwrap();
    assert_eq!(resp.attempts, 3);
    assert_eq!(resp.text, "No. The length is checked.");
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (12, 3));

    let last = server.requests().pop().unwrap();
    assert_eq!(last.header("authorization"), Some("Bearer sk-test"));
    let body: Value = serde_json::from_str(&last.body).unwrap();
    assert_eq!(body["temperature"], json!(0.0));
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Is it buggy?");
}

#[test]
fn live_transport_gives_up_with_attempt_log() {
    let server = StubServer::start(|_| (503, "{}".into()));
    let transport = HttpTransport::new(&server.base, None, Duration::from_secs(5)).unwrap();
    let client = LlmClient::with_transport(fast_config(), Arc::new(transport)).unwrap();
    match client.detect("x") {
        Err(LlmError::Transport { attempts, log }) => {
            assert_eq!(attempts, 4);
            assert_eq!(log.len(), 4);
            assert!(log.iter().all(|l| l.contains("503")));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_completion_is_protocol_error() {
    let server = StubServer::start(|_| (200, "{\"choices\": []}".into()));
    let transport = HttpTransport::new(&server.base, None, Duration::from_secs(5)).unwrap();
    let client = LlmClient::with_transport(fast_config(), Arc::new(transport)).unwrap();
    assert!(matches!(client.detect("x"), Err(LlmError::Protocol(_))));
    assert_eq!(server.requests().len(), 1);
}

/// Records the peak number of concurrent sends and every send time.
#[derive(Default)]
struct Instrumented {
    active: AtomicUsize,
    peak: AtomicUsize,
    times: std::sync::Mutex<Vec<Instant>>,
}

impl ChatTransport for Instrumented {
    fn send(&self, _request: &ChatRequest) -> Result<ChatReply, TransportFailure> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.times.lock().unwrap().push(Instant::now());
        std::thread::sleep(Duration::from_millis(20));
        self.active.fetch_sub(1, Ordering::SeqCst);
        Ok(ChatReply {
            content: "Yes".into(),
            prompt_tokens: 0,
            completion_tokens: 0,
        })
    }
}

#[test]
fn in_flight_cap_holds() {
    let transport = Arc::new(Instrumented::default());
    let config = LlmConfig {
        max_in_flight: 3,
        ..fast_config()
    };
    let client = LlmClient::with_transport(config, transport.clone()).unwrap();
    std::thread::scope(|s| {
        for _ in 0..12 {
            s.spawn(|| client.detect("p").unwrap());
        }
    });
    let peak = transport.peak.load(Ordering::SeqCst);
    assert!(peak <= 3, "peak {peak}");
    assert!(peak >= 2, "requests never overlapped");
}

#[test]
fn rate_limit_spaces_requests() {
    let transport = Arc::new(Instrumented::default());
    let config = LlmConfig {
        max_in_flight: 1,
        requests_per_minute: Some(1200.0),
        ..fast_config()
    };
    let client = LlmClient::with_transport(config, transport.clone()).unwrap();
    for _ in 0..6 {
        client.detect("p").unwrap();
    }
    let times = transport.times.lock().unwrap();
    // 20 requests per second with a burst of one: five gaps of at least 50 ms.
    let span = times.last().unwrap().duration_since(times[0]);
    assert!(span >= Duration::from_millis(240), "span {span:?}");
}
