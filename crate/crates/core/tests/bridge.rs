//! The bridge client against an in-process HTTP stub.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use cortex_align::bridge::{encode_table_body, BridgeClient};
use cortex_align::dataset::EmbeddingTable;
use cortex_align::decode::{evaluate_embeddings, DecoderBackend, PromptSpec};
use cortex_align::{Error, Tensor};

struct Request {
    method: String,
    path: String,
    body: Vec<u8>,
}

/// Answers each connection with `respond(&request)` and forwards the
/// request on `requests`.
fn stub(respond: impl Fn(&Request) -> (u16, Vec<u8>) + Send + 'static) -> (String, mpsc::Receiver<Request>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut parts = line.split_whitespace();
            let (method, path) = (parts.next().unwrap().to_string(), parts.next().unwrap().to_string());
            let mut len = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req = Request { method, path, body };
            let (status, content) = respond(&req);
            let _ = tx.send(req);
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                content.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(&content);
        }
    });
    (url, rx)
}

fn table() -> EmbeddingTable {
    let vectors = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, -0.5, 0.25]).unwrap();
    EmbeddingTable::new(vectors, vec!["甲".into(), "乙".into(), "丙".into()]).unwrap()
}

#[test]
fn model_hash_accepts_json_or_plain_text() {
    let (url, _) = stub(|r| match r.path.as_str() {
        "/v1/model-hash" => (200, br#"{"hash":"abc123"}"#.to_vec()),
        _ => (404, Vec::new()),
    });
    assert_eq!(BridgeClient::new(&url).unwrap().model_hash().unwrap(), "abc123");

    let (url, _) = stub(|_| (200, b"  deadbeef\n".to_vec()));
    assert_eq!(BridgeClient::new(url).unwrap().model_hash().unwrap(), "deadbeef");
}

#[test]
fn embedding_table_round_trips() {
    let body = encode_table_body(&table());
    let (url, rx) = stub(move |_| (200, body.clone()));
    let got = BridgeClient::new(url).unwrap().embedding_table().unwrap();
    assert_eq!(got, table());
    let req = rx.recv().unwrap();
    assert_eq!((req.method.as_str(), req.path.as_str()), ("GET", "/v1/embedding-table"));
}

#[test]
fn generate_posts_prompt_embedding_and_token_budget() {
    let (url, rx) = stub(|_| {
        (
            200,
            r#"{"text":"乙","token_ids":[1],"model":"stub"}"#.as_bytes().to_vec(),
        )
    });
    let backend = DecoderBackend::Bridge(BridgeClient::new(url).unwrap());
    let prompt = PromptSpec::new("say it").unwrap().with_max_tokens(3).unwrap();
    let decoded = backend.decode("s0", &[0.5, -1.0], &prompt).unwrap();
    assert_eq!(decoded.text, "乙");
    assert_eq!(decoded.token_ids, vec![1]);

    let req = rx.recv().unwrap();
    assert_eq!((req.method.as_str(), req.path.as_str()), ("POST", "/v1/generate"));
    let body: serde_json::Value = serde_json::from_slice(&req.body).unwrap();
    assert_eq!(body["prompt"], "say it");
    assert_eq!(body["embedding"], serde_json::json!([0.5, -1.0]));
    assert_eq!(body["max_tokens"], 3);
}

#[test]
fn default_prompt_budget_is_eight_tokens() {
    let (url, rx) = stub(|_| (200, br#"{"text":"x","token_ids":[0]}"#.to_vec()));
    let backend = DecoderBackend::Bridge(BridgeClient::new(url).unwrap());
    backend.decode("s0", &[0.0], &PromptSpec::default()).unwrap();
    let body: serde_json::Value = serde_json::from_slice(&rx.recv().unwrap().body).unwrap();
    assert_eq!(body["max_tokens"], 8);
    assert!(PromptSpec::default().with_max_tokens(0).is_err());
}

#[test]
fn evaluation_through_bridge_scores_returned_text() {
    let replies = ["甲", "乙乙", "丙"];
    let counter = std::sync::atomic::AtomicUsize::new(0);
    let (url, _) = stub(move |_| {
        let i = counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        (
            200,
            format!(r#"{{"text":"{}","token_ids":[]}}"#, replies[i]).into_bytes(),
        )
    });
    let backend = DecoderBackend::Bridge(BridgeClient::new(url).unwrap());
    let cases: Vec<(String, String)> = [("a", "甲"), ("b", "乙"), ("c", "甲")]
        .iter()
        .map(|(i, t)| (i.to_string(), t.to_string()))
        .collect();
    let emb = Tensor::zeros(&[3, 2]);
    let eval = evaluate_embeddings(&cases, &emb, &backend, &PromptSpec::default()).unwrap();
    assert_eq!(eval.report.true_cases, 1);
    assert_eq!(eval.predictions[1].prediction, "乙乙");
}

#[test]
fn server_errors_name_the_sample() {
    let (url, _) = stub(|_| (503, b"warming up".to_vec()));
    let backend = DecoderBackend::Bridge(BridgeClient::new(url).unwrap());
    match backend.decode("sub04_0007", &[1.0], &PromptSpec::default()) {
        Err(Error::Backend { sample, reason }) => {
            assert_eq!(sample, "sub04_0007");
            assert!(reason.contains("503") && reason.contains("warming up"), "{reason}");
        }
        other => panic!("expected backend error, got {other:?}"),
    }
}

#[test]
fn malformed_responses_are_backend_errors() {
    let (url, _) = stub(|r| match r.path.as_str() {
        "/v1/generate" => (200, b"{\"text\": 5}".to_vec()),
        _ => (200, b"not a table".to_vec()),
    });
    let client = BridgeClient::new(url).unwrap();
    assert!(matches!(client.generate("p", &[0.0], 8), Err(Error::Backend { .. })));
    assert!(matches!(client.embedding_table(), Err(Error::Backend { .. })));
}

#[test]
fn unreachable_bridge_is_a_backend_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let client = BridgeClient::with_timeout(url, Duration::from_secs(2)).unwrap();
    assert!(matches!(client.model_hash(), Err(Error::Backend { .. })));
}

#[test]
fn rejects_non_http_urls() {
    assert!(BridgeClient::new("ftp://host").is_err());
    assert!(BridgeClient::new("localhost:8000").is_err());
    assert_eq!(BridgeClient::new("http://h:1/").unwrap().base_url(), "http://h:1");
}
