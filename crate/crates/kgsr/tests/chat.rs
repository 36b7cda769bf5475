//! The HTTP client against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use kgsr::chat::{ChatClientConfig, HttpChatClient};
use kgsr_core::extract::{ExtractionTarget, SubjectRule, TargetSet};
use kgsr_core::prompt::{extract_review_triples, ChatClient};
use serde_json::Value;

type Log = Arc<Mutex<Vec<(String, Value)>>>;

/// Serves one canned `(status, body)` per connection, recording each
/// request's authorization header and JSON body.
fn serve(replies: Vec<(u16, String)>) -> (String, Log) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut auth = String::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push((auth, serde_json::from_slice(&buf).unwrap()));
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn reply(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn client(url: String, retries: u32) -> HttpChatClient {
    let config = ChatClientConfig {
        model: "test-model".into(),
        retries,
        backoff_ms: 1,
        timeout_secs: 5,
        ..ChatClientConfig::default()
    };
    HttpChatClient::new(&config, url, "sekret".into()).unwrap()
}

#[test]
fn sends_the_chat_request_and_reads_the_reply() {
    let (url, seen) = serve(vec![(200, reply("like\tkettle"))]);
    let c = client(url, 0);
    assert_eq!(c.complete("hello").unwrap(), "like\tkettle");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].0, "Bearer sekret");
    assert_eq!(seen[0].1["model"], "test-model");
    assert_eq!(seen[0].1["messages"][0]["role"], "user");
    assert_eq!(seen[0].1["messages"][0]["content"], "hello");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, reply("ok"))]);
    assert_eq!(client(url, 2).complete("x").unwrap(), "ok");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let (url, _) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    let err = client(url, 1).complete("x").unwrap_err();
    assert!(matches!(err, kgsr_core::Error::Chat(_)), "{err}");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(401, "{\"error\":\"bad key\"}".into()), (200, reply("late"))]);
    assert!(client(url, 3).complete("x").is_err());
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_reply_is_an_error() {
    let (url, _) = serve(vec![(200, "{\"choices\": []}".into())]);
    assert!(client(url, 0).complete("x").is_err());
}

#[test]
fn unreachable_endpoint_fails_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = client(format!("http://127.0.0.1:{port}/"), 1).complete("x").unwrap_err();
    assert!(matches!(err, kgsr_core::Error::Chat(_)));
}

#[test]
fn extraction_through_http() {
    let (url, seen) = serve(vec![(200, reply("like\twash machine\nnot a triple"))]);
    let targets = TargetSet::new(vec![ExtractionTarget::property("preference", "like", SubjectRule::User)]).unwrap();
    let out = extract_review_triples(3, "I like the wash machine", &targets, &client(url, 0)).unwrap();
    assert_eq!(out.triples.len(), 1);
    assert_eq!(out.triples[0].value, "wash machine");
    assert_eq!(out.triples[0].review, 3);
    assert_eq!(out.warnings, 1);
    let prompt = seen.lock().unwrap()[0].1["messages"][0]["content"].as_str().unwrap().to_string();
    assert!(prompt.contains("I like the wash machine"));
}

#[test]
fn zero_timeout_is_rejected() {
    let config = ChatClientConfig {
        timeout_secs: 0,
        ..ChatClientConfig::default()
    };
    assert!(HttpChatClient::new(&config, "http://x".into(), "k".into()).is_err());
}
