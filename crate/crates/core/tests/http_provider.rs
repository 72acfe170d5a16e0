mod common;

use std::time::Duration;

use common::StubServer;
use serde_json::{json, Value};
use vulnprompt_core::modelplug::{
    HttpProvider, PredictBatchRequest, PredictRequest, ProviderError, ProviderKind,
};
use vulnprompt_core::{FunctionRecord, Label, Provider, ProviderConfig};

fn score(code: &str) -> f64 {
    (code.len() % 10) as f64 / 10.0
}

fn model_server() -> StubServer {
    StubServer::start(|req| match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/health") => (200, "{\"status\":\"ok\"}".into()),
        ("POST", "/predict") => {
            let r: PredictRequest = serde_json::from_str(&req.body).unwrap();
            (200, json!({ "probability": score(&r.code) }).to_string())
        }
        ("POST", "/predict_batch") => {
            let r: PredictBatchRequest = serde_json::from_str(&req.body).unwrap();
            assert_eq!(r.ids.len(), r.codes.len());
            let probs: Vec<f64> = r.codes.iter().map(|c| score(c)).collect();
            (200, json!({ "probabilities": probs }).to_string())
        }
        _ => (404, "{}".into()),
    })
}

fn records() -> Vec<FunctionRecord> {
    (0..7)
        .map(|i| FunctionRecord::new(format!("f{i}"), "p", "x".repeat(i + 3), Label::Benign))
        .collect()
}

fn provider(base: &str) -> Provider {
    Provider::open(&ProviderConfig {
        kind: ProviderKind::Http,
        location: Some(base.to_owned()),
        threshold: 0.5,
        timeout_ms: 5_000,
        max_in_flight: 2,
    })
    .unwrap()
}

#[test]
fn health_and_single_prediction() {
    let server = model_server();
    HttpProvider::new(&server.base, Duration::from_secs(5), 1)
        .unwrap()
        .health()
        .unwrap();
    let p = provider(&server.base);
    let rec = &records()[2];
    let pred = p.predict(rec).unwrap();
    assert_eq!(pred.probability, score(&rec.source));
    assert_eq!(pred.verdict, Label::Vulnerable, "p = 0.5 meets the threshold");
    let sent: Value = serde_json::from_str(&server.requests().last().unwrap().body).unwrap();
    assert_eq!(sent, json!({ "id": "f2", "code": "xxxxx" }));
}

#[test]
fn batch_equals_singles() {
    let server = model_server();
    let p = provider(&server.base);
    let recs = records();
    let refs: Vec<&FunctionRecord> = recs.iter().collect();
    let batch = p.predict_batch(&refs).unwrap();
    let singles: Vec<_> = recs.iter().map(|r| p.predict(r).unwrap()).collect();
    assert_eq!(batch, singles);
    assert!(server
        .requests()
        .iter()
        .any(|r| r.path == "/predict_batch"));
}

#[test]
fn out_of_range_probability_is_protocol_error() {
    let server = StubServer::start(|_| (200, "{\"probability\": 1.3}".into()));
    let p = provider(&server.base);
    match p.predict(&records()[0]) {
        Err(ProviderError::Protocol(msg)) => assert!(msg.contains("1.3")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn server_error_is_protocol_error() {
    let server = StubServer::start(|_| (500, "{}".into()));
    let p = provider(&server.base);
    assert!(matches!(
        p.predict(&records()[0]),
        Err(ProviderError::Protocol(_))
    ));
    let health = HttpProvider::new(&server.base, Duration::from_secs(5), 1)
        .unwrap()
        .health();
    assert!(matches!(health, Err(ProviderError::Protocol(_))));
}

#[test]
fn unreachable_server_is_transport_error() {
    let addr = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let p = provider(&format!("http://{addr}"));
    assert!(matches!(
        p.predict(&records()[0]),
        Err(ProviderError::Transport(_))
    ));
}

#[test]
fn malformed_batch_length_rejected() {
    let server = StubServer::start(|_| (200, "{\"probabilities\": [0.1]}".into()));
    let p = provider(&server.base);
    let recs = records();
    let refs: Vec<&FunctionRecord> = recs.iter().take(3).collect();
    assert!(p.predict_batch(&refs).is_err());
}
