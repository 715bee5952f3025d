use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use codeagents::backend::{parse_chat_response, Backend, HttpBackend};
use codeagents::core::gateway::{ModelBackend, ModelError, TokenUsage, UsageSource};
use serde_json::Value;

struct Seen {
    headers: Vec<String>,
    body: String,
}

fn read_request(stream: &mut impl Read) -> Seen {
    let mut r = BufReader::new(stream);
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        headers.push(line);
    }
    let header = |name: &str| {
        headers.iter().find_map(|h| {
            let (k, v) = h.split_once(':')?;
            k.eq_ignore_ascii_case(name).then(|| v.trim().to_string())
        })
    };
    let mut body = Vec::new();
    if let Some(n) = header("content-length") {
        body.resize(n.parse().unwrap(), 0);
        r.read_exact(&mut body).unwrap();
    } else if header("transfer-encoding").is_some_and(|v| v.contains("chunked")) {
        loop {
            let mut size = String::new();
            r.read_line(&mut size).unwrap();
            let n = usize::from_str_radix(size.trim(), 16).unwrap();
            let mut chunk = vec![0; n + 2];
            r.read_exact(&mut chunk).unwrap();
            if n == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..n]);
        }
    }
    Seen {
        headers,
        body: String::from_utf8(body).unwrap(),
    }
}

/// Serves one canned response per connection and reports what it received.
fn mock(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut s, _) = listener.accept().unwrap();
            let seen = read_request(&mut s);
            tx.send(seen).unwrap();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            s.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"def f():\n    walk('kitchen')"}}],"usage":{"prompt_tokens":11,"completion_tokens":7}}"#;

#[test]
fn one_request_per_completion_with_provider_usage() {
    let (url, rx) = mock(vec![(200, OK.into())]);
    let mut b = HttpBackend::new(url, "test-model", "sk-test-secret");
    let c = b.complete("plan please").unwrap();
    assert_eq!(c.text, "def f():\n    walk('kitchen')");
    assert_eq!(c.usage, TokenUsage::new(11, 7));
    assert_eq!(c.usage_source, UsageSource::Provider);

    let seen = rx.recv().unwrap();
    assert!(seen.headers[0].starts_with("POST /v1/chat/completions"));
    assert!(seen
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer sk-test-secret")));
    let req: Value = serde_json::from_str(&seen.body).unwrap();
    assert_eq!(req["model"], "test-model");
    assert_eq!(req["messages"][0]["content"], "plan please");

    let bodies = b.take_bodies().unwrap();
    assert_eq!(bodies.request, seen.body);
    assert_eq!(bodies.response, OK);
    assert!(b.take_bodies().is_none());
}

#[test]
fn rejection_keeps_bodies() {
    let err = r#"{"error":{"message":"bad key"}}"#;
    let (url, _rx) = mock(vec![(401, err.into())]);
    let mut b = HttpBackend::new(url, "m", "k");
    match b.complete("x") {
        Err(ModelError::ProviderRejection(m)) => assert!(m.starts_with("HTTP 401"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(b.take_bodies().unwrap().response, err);
}

#[test]
fn transport_failure() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut b = HttpBackend::new(format!("http://127.0.0.1:{port}/"), "m", "k");
    assert!(matches!(b.complete("x"), Err(ModelError::Transport(_))));
    assert_eq!(b.complete(""), Err(ModelError::EmptyPrompt));
}

#[test]
fn response_parsing() {
    let no_usage = r#"{"choices":[{"message":{"content":"a b c"}}]}"#;
    let c = parse_chat_response("one two", no_usage).unwrap();
    assert_eq!(c.usage_source, UsageSource::Local);
    assert_eq!(c.usage, TokenUsage::new(2, 3));
    assert!(matches!(
        parse_chat_response("p", r#"{"choices":[]}"#),
        Err(ModelError::ProviderRejection(_))
    ));
    assert!(matches!(
        parse_chat_response("p", "not json"),
        Err(ModelError::ProviderRejection(_))
    ));
    assert!(matches!(
        parse_chat_response("p", r#"{"error":"quota"}"#),
        Err(ModelError::ProviderRejection(_))
    ));
}

#[test]
fn key_never_shows_in_debug() {
    let b = HttpBackend::new("http://x", "m", "sk-very-secret");
    let dbg = format!("{b:?}");
    assert!(!dbg.contains("sk-very-secret"));
    assert!(dbg.contains("redacted"));
}
