//! Chat client against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use daclr_core::event::{is_valid, Modality};
use daclr_core::summarizer::client::{request_summary, summarize_batch, MllmClientConfig, SummaryInput, Summarizer};
use daclr_core::summarizer::PromptTemplate;
use daclr_core::Error;

struct Reply {
    status: u16,
    body: String,
}

fn chat(content: &str) -> Reply {
    Reply {
        status: 200,
        body: json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string(),
    }
}

fn status(code: u16) -> Reply {
    Reply {
        status: code,
        body: "{}".into(),
    }
}

/// Serves `replies` in order, one per connection, and records request bodies.
fn serve(replies: Vec<Reply>) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for reply in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(serde_json::from_slice(&body).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.status,
                reply.body.len(),
                reply.body
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn config(base_url: String, key_env: &str) -> MllmClientConfig {
    std::env::set_var(key_env, "test-key");
    MllmClientConfig {
        base_url,
        model_name: "mock".into(),
        api_key_env: key_env.into(),
        timeout_secs: 5.0,
        max_retries: 2,
        retry_backoff_secs: 0.0,
        max_concurrency: 1,
    }
}

fn input(id: &str, text: &str) -> SummaryInput {
    SummaryInput {
        id: id.into(),
        text: text.into(),
        modality: Modality::Text,
        media_path: None,
    }
}

const GOOD: &str = r#"{"summary": "Alice met Bob in Paris", "participants": ["Alice", "Bob"], "attributes": ["Paris"], "structure": "[Mask] met [Mask] in [Mask]"}"#;

#[test]
fn well_formed_reply() {
    let (url, seen) = serve(vec![chat(GOOD)]);
    let cfg = config(url, "DACLR_TEST_KEY_OK");
    let s = request_summary(&cfg, &PromptTemplate::builtin(), &input("c1", "Alice met Bob in Paris")).unwrap();
    assert_eq!(s.participants, ["Alice", "Bob"]);
    assert_eq!(s.structure, "[Mask] met [Mask] in [Mask]");
    let req = &seen.lock().unwrap()[0];
    assert_eq!(req["model"], "mock");
    let prompt = req["messages"][0]["content"][0]["text"].as_str().unwrap();
    assert!(prompt.contains("Alice met Bob in Paris"));
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![status(503), status(429), chat(GOOD)]);
    let cfg = config(url, "DACLR_TEST_KEY_RETRY");
    let s = request_summary(&cfg, &PromptTemplate::builtin(), &input("c1", "Alice met Bob in Paris")).unwrap();
    assert!(is_valid(&s));
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn gives_up_after_max_retries() {
    let (url, _) = serve(vec![status(500), status(500), status(500)]);
    let cfg = config(url, "DACLR_TEST_KEY_GIVEUP");
    let err = request_summary(&cfg, &PromptTemplate::builtin(), &input("c1", "x")).unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err:?}");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![status(400)]);
    let cfg = config(url, "DACLR_TEST_KEY_400");
    assert!(request_summary(&cfg, &PromptTemplate::builtin(), &input("c1", "x")).is_err());
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_reply_gets_one_repair_prompt() {
    let (url, seen) = serve(vec![chat("Sure! Here is the summary."), chat(GOOD)]);
    let cfg = config(url, "DACLR_TEST_KEY_REPAIR");
    let s = request_summary(&cfg, &PromptTemplate::builtin(), &input("c1", "Alice met Bob in Paris")).unwrap();
    assert_eq!(s.attributes, ["Paris"]);
    let log = seen.lock().unwrap();
    let second = log[1]["messages"].as_array().unwrap();
    assert_eq!(second.len(), 3);
    assert_eq!(second[1]["role"], "assistant");
}

#[test]
fn repair_failure_is_a_quality_error() {
    let (url, _) = serve(vec![chat("no json"), chat("still none")]);
    let cfg = config(url, "DACLR_TEST_KEY_BADREPAIR");
    let err = request_summary(&cfg, &PromptTemplate::builtin(), &input("c1", "x")).unwrap_err();
    assert!(matches!(err, Error::SummaryQuality(_)), "{err:?}");
}

#[test]
fn missing_api_key() {
    let cfg = MllmClientConfig {
        api_key_env: "DACLR_TEST_KEY_NEVER_SET".into(),
        ..MllmClientConfig::default()
    };
    let err = request_summary(&cfg, &PromptTemplate::builtin(), &input("c1", "x")).unwrap_err();
    assert!(matches!(err, Error::MissingApiKey(_)), "{err:?}");
}

#[test]
fn batch_falls_back_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summaries.jsonl");
    let (url, _) = serve(vec![chat(GOOD), status(400)]);
    let cfg = config(url, "DACLR_TEST_KEY_BATCH");
    let template = PromptTemplate::builtin();
    let remote = Summarizer::Remote {
        cfg: &cfg,
        template: &template,
        fallback_on_error: true,
    };
    let inputs = [input("c1", "Alice met Bob in Paris"), input("c2", "Carol visited Rome in 2020")];
    let report = summarize_batch(&remote, &inputs, &out).unwrap();
    assert_eq!((report.written, report.fallback), (2, 1));
    assert!(report.failed.is_empty());

    // everything present: nothing is requested again
    let again = summarize_batch(&Summarizer::Offline, &inputs, &out).unwrap();
    assert_eq!((again.written, again.skipped), (0, 2));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2);
}
