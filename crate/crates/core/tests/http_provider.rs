//! The chat-completions client against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use bloomtax_core::corpus::LabeledSentence;
use bloomtax_core::llm::{classify_zero_shot, LlmError, PromptTemplate, ProviderConfig, ProviderKind};
use bloomtax_core::BloomLabel;

struct Seen {
    auth: Option<String>,
    body: String,
}

/// Serve one canned `(status, body)` per connection, recording requests.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let req = read_request(&stream);
            log.lock().unwrap().push(req);
            respond(stream, status, &body);
        }
    });
    (url, seen)
}

fn read_request(stream: &TcpStream) -> Seen {
    let mut reader = BufReader::new(stream);
    let mut len = 0;
    let mut auth = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let (name, value) = line.split_once(':').unwrap_or((line, ""));
        match name.to_ascii_lowercase().as_str() {
            "content-length" => len = value.trim().parse().unwrap(),
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    Seen {
        auth,
        body: String::from_utf8(body).unwrap(),
    }
}

fn respond(mut stream: TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        429 => "Too Many Requests",
        _ => "Error",
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn live(url: &str, auth_env: Option<&str>) -> ProviderConfig {
    ProviderConfig {
        kind: ProviderKind::Http,
        endpoint: Some(url.to_string()),
        model: "test-model".into(),
        auth_env: auth_env.map(str::to_string),
        max_concurrency: 1,
        backoff_ms: 1,
        ..ProviderConfig::mock("live")
    }
}

fn one_sentence() -> Vec<LabeledSentence> {
    vec![LabeledSentence {
        id: 0,
        text: "Compare the two proofs.".into(),
        label: BloomLabel::Analysis,
    }]
}

#[test]
fn retries_after_rate_limit_then_parses_reply() {
    let (url, seen) = serve(vec![(429, "{}".into()), (200, completion("Analysis"))]);
    std::env::set_var("BLOOMTAX_HTTP_TEST_TOKEN", "sekrit");
    let cfg = live(&url, Some("BLOOMTAX_HTTP_TEST_TOKEN"));
    let provider = cfg.build().unwrap();
    let (verdicts, report) =
        classify_zero_shot(&one_sentence(), &PromptTemplate::bundled(), provider.as_ref(), &cfg).unwrap();
    assert_eq!(verdicts[0].attempts, 2);
    assert_eq!(verdicts[0].parsed, Some(BloomLabel::Analysis));
    assert_eq!(report.headline.accuracy, 1.0);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].auth.as_deref(), Some("Bearer sekrit"));
    let body: serde_json::Value = serde_json::from_str(&seen[1].body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Compare the two proofs.");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
    let cfg = live(&url, None);
    let provider = cfg.build().unwrap();
    let err = classify_zero_shot(&one_sentence(), &PromptTemplate::bundled(), provider.as_ref(), &cfg).unwrap_err();
    match err {
        LlmError::ProviderUnavailable { attempts, .. } => assert_eq!(attempts, 1),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn retries_are_bounded() {
    let (url, seen) = serve(vec![(503, String::new()); 3]);
    let cfg = ProviderConfig {
        max_retries: 2,
        ..live(&url, None)
    };
    let provider = cfg.build().unwrap();
    let err = classify_zero_shot(&one_sentence(), &PromptTemplate::bundled(), provider.as_ref(), &cfg).unwrap_err();
    assert!(matches!(err, LlmError::ProviderUnavailable { attempts: 3, .. }));
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn missing_token_sends_nothing() {
    let (url, seen) = serve(vec![]);
    let cfg = live(&url, Some("BLOOMTAX_HTTP_TEST_UNSET_VAR"));
    assert!(matches!(cfg.build(), Err(LlmError::AuthMissing(_))));
    assert!(seen.lock().unwrap().is_empty());
}
