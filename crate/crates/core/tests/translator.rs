use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use edgebot_core::translator::{
    extract_range, rule_translate, translate, BackendConfig, PromptTemplate, TranslateError, Verdict,
};
use edgebot_core::{parse_sequence, validate};
use proptest::prelude::*;
use serde_json::{json, Value};

#[derive(Clone)]
enum Behavior {
    Respond(u16, String),
    Hang(Duration),
    Close,
}

#[derive(Debug, Clone)]
struct Seen {
    request_line: String,
    headers: Vec<String>,
    body: Value,
}

/// Minimal HTTP/1.1 server answering one scripted behavior per connection.
fn fixture_server(script: Vec<Behavior>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for behavior in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut len = 0usize;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end().to_string();
                if h.is_empty() {
                    break;
                }
                if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(h);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: serde_json::from_slice(&body).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            match behavior {
                Behavior::Respond(status, body) => {
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    stream.write_all(resp.as_bytes()).unwrap();
                }
                Behavior::Hang(d) => thread::sleep(d),
                Behavior::Close => drop(stream),
            }
        }
    });
    (addr, seen)
}

fn remote(endpoint: &str, credential_env: &str, timeout_s: f64) -> BackendConfig {
    BackendConfig::RemoteChat {
        endpoint: endpoint.into(),
        path: "/v1/chat/completions".into(),
        model_name: "test-model".into(),
        timeout_s,
        credential_env: credential_env.into(),
    }
}

fn local(endpoint: &str, timeout_s: f64) -> BackendConfig {
    BackendConfig::LocalServer {
        endpoint: endpoint.into(),
        path: "/completion".into(),
        model_name: "test-local".into(),
        timeout_s,
        credential_env: None,
    }
}

fn chat_ok(content: &str) -> Behavior {
    Behavior::Respond(200, json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string())
}

fn run(cfg: &BackendConfig, utterance: &str) -> Result<edgebot_core::translator::TranslationResult, TranslateError> {
    let backend = cfg.build().unwrap();
    translate(backend.as_ref(), &PromptTemplate::default(), utterance)
}

#[test]
fn remote_chat_passthrough() {
    std::env::set_var("EDGEBOT_TEST_KEY_A", "sekret");
    let (addr, seen) = fixture_server(vec![chat_ok("f,100")]);
    let r = run(&remote(&addr, "EDGEBOT_TEST_KEY_A", 5.0), "Go forward 100cm").unwrap();
    assert_eq!(r.raw_output, "f,100");
    assert_eq!(r.verdict, Verdict::Valid);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].request_line, "POST /v1/chat/completions HTTP/1.1");
    assert!(seen[0].headers.iter().any(|h| h == "authorization: Bearer sekret" || h == "Authorization: Bearer sekret"));
    assert_eq!(seen[0].body["temperature"], 0);
    assert_eq!(seen[0].body["model"], "test-model");
    let msgs = seen[0].body["messages"].as_array().unwrap();
    assert_eq!(msgs.last().unwrap()["content"], "Go forward 100cm");
}

#[test]
fn remote_chat_timeout() {
    std::env::set_var("EDGEBOT_TEST_KEY_B", "k");
    let (addr, _) = fixture_server(vec![Behavior::Hang(Duration::from_secs(3))]);
    let err = run(&remote(&addr, "EDGEBOT_TEST_KEY_B", 0.3), "Twirl").unwrap_err();
    assert!(matches!(err, TranslateError::Timeout(_)), "{err:?}");
}

#[test]
fn remote_chat_malformed_body_names_field() {
    std::env::set_var("EDGEBOT_TEST_KEY_C", "k");
    let (addr, _) = fixture_server(vec![
        Behavior::Respond(200, json!({"choices": []}).to_string()),
        Behavior::Respond(200, json!({"choices": [{"message": {}}]}).to_string()),
        Behavior::Respond(200, "not json".into()),
    ]);
    let cfg = remote(&addr, "EDGEBOT_TEST_KEY_C", 5.0);
    assert_eq!(run(&cfg, "Twirl").unwrap_err(), TranslateError::Decode("choices[0]".into()));
    assert_eq!(run(&cfg, "Twirl").unwrap_err(), TranslateError::Decode("choices[0].message.content".into()));
    assert_eq!(run(&cfg, "Twirl").unwrap_err(), TranslateError::Decode("JSON body".into()));
}

#[test]
fn remote_chat_http_status_and_credentials() {
    let err = run(&remote("http://127.0.0.1:9", "EDGEBOT_TEST_KEY_UNSET", 1.0), "Twirl").unwrap_err();
    assert_eq!(err, TranslateError::MissingCredential("EDGEBOT_TEST_KEY_UNSET".into()));

    std::env::set_var("EDGEBOT_TEST_KEY_D", "k");
    let (addr, _) = fixture_server(vec![Behavior::Respond(429, r#"{"error":"slow down"}"#.into())]);
    let err = run(&remote(&addr, "EDGEBOT_TEST_KEY_D", 5.0), "Twirl").unwrap_err();
    assert!(matches!(err, TranslateError::Http { status: 429, ref body } if body.contains("slow down")), "{err:?}");
}

#[test]
fn transient_failure_is_retried_once() {
    std::env::set_var("EDGEBOT_TEST_KEY_E", "k");
    let (addr, seen) = fixture_server(vec![Behavior::Close, chat_ok("r,90")]);
    let r = run(&remote(&addr, "EDGEBOT_TEST_KEY_E", 5.0), "Turn right").unwrap();
    assert_eq!(r.raw_output, "r,90");
    assert_eq!(seen.lock().unwrap().len(), 2);

    let (addr, seen) = fixture_server(vec![Behavior::Close, Behavior::Close, chat_ok("r,90")]);
    let err = run(&remote(&addr, "EDGEBOT_TEST_KEY_E", 5.0), "Turn right").unwrap_err();
    assert!(matches!(err, TranslateError::Transport(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn local_server_passthrough() {
    let (addr, seen) = fixture_server(vec![Behavior::Respond(200, json!({"content": " f,100\n"}).to_string())]);
    let r = run(&local(&addr, 5.0), "Go forward 100cm").unwrap();
    assert_eq!(r.raw_output, " f,100\n");
    assert_eq!(r.extracted.as_deref(), Some("f,100"));
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].request_line, "POST /completion HTTP/1.1");
    assert!(seen[0].body["prompt"].as_str().unwrap().ends_with("Input: Go forward 100cm\nOutput:"));
    assert_eq!(seen[0].body["temperature"], 0);
    assert!(!seen[0].headers.iter().any(|h| h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn local_server_timeout() {
    let (addr, _) = fixture_server(vec![Behavior::Hang(Duration::from_secs(3))]);
    let err = run(&local(&addr, 0.3), "Twirl").unwrap_err();
    assert!(matches!(err, TranslateError::Timeout(_)), "{err:?}");
}

#[test]
fn local_server_malformed_body() {
    let (addr, _) = fixture_server(vec![Behavior::Respond(200, json!({"text": "f,1"}).to_string())]);
    assert_eq!(run(&local(&addr, 5.0), "Twirl").unwrap_err(), TranslateError::Decode("content".into()));
}

#[test]
fn fixture_replay_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rec.json");
    std::fs::write(&path, r#"{"Move forward 50 centimeters": "f,450;f,10"}"#).unwrap();
    let cfg = BackendConfig::Fixture { path };
    let a = run(&cfg, "Move forward 50 centimeters").unwrap();
    let b = run(&cfg, "Move forward 50 centimeters").unwrap();
    assert_eq!(a.raw_output, b.raw_output);
    assert_eq!(a.raw_output, "f,450;f,10");
    assert!(a.is_valid());
}

/// Opt-in: set EDGEBOT_LIVE_REMOTE=1 plus OPENAI_API_KEY to hit the real
/// service.
#[test]
fn live_remote_chat() {
    if std::env::var_os("EDGEBOT_LIVE_REMOTE").is_none() {
        return;
    }
    let r = run(&BackendConfig::remote_default(), "Go forward 100cm").unwrap();
    println!("live remote: {:?}", r.raw_output);
}

/// Opt-in: set EDGEBOT_LIVE_LOCAL=1 with a completion server on port 8080.
#[test]
fn live_local_server() {
    if std::env::var_os("EDGEBOT_LIVE_LOCAL").is_none() {
        return;
    }
    let r = run(&BackendConfig::local_default(), "Go forward 100cm").unwrap();
    println!("live local: {:?}", r.raw_output);
}

#[test]
fn rule_examples() {
    assert_eq!(rule_translate("move forward 2 feet").as_deref(), Some("f,60.96"));
    assert_eq!(rule_translate("Turn left pi radians").as_deref(), Some("l,180"));
    assert_eq!(rule_translate("Do a twirl, then go to the wall").as_deref(), Some("r,360;w"));
    assert_eq!(rule_translate("Pick a route to traverse around the room"), None);
}

fn utterance() -> impl Strategy<Value = String> {
    let words = prop::sample::select(vec![
        "move", "go", "turn", "forward", "back", "backward", "left", "right", "around", "twirl", "wall", "stop",
        "then", "and", ",", "come", "return", "behind", "you", "feet", "cm", "degrees", "radians", "pi", "the",
        "either", "to", "10", "2.5", "90", "180", "3", "meters", "inches", "sensor",
    ]);
    prop::collection::vec(words, 0..12).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn rule_translate_is_deterministic_and_valid(u in utterance()) {
        let a = rule_translate(&u);
        prop_assert_eq!(&a, &rule_translate(&u));
        if let Some(s) = a {
            prop_assert!(validate(&s).valid, "{} -> {}", u, s);
            prop_assert_eq!(parse_sequence(&s).unwrap().to_string(), s);
        }
    }

    #[test]
    fn extraction_is_a_parseable_substring(raw in "[ -~\n]{0,80}") {
        if let Some(r) = extract_range(&raw) {
            prop_assert!(raw.get(r.clone()).is_some());
            prop_assert!(parse_sequence(&raw[r]).is_ok());
        }
    }

    #[test]
    fn extraction_finds_embedded_commands(
        pre in "[a-z ]{0,20}",
        cmd in "(f|b|l|r),[0-9]{1,3}(;(s|w))?",
        post in "[a-z ]{0,20}",
    ) {
        let raw = format!("{pre} {cmd} {post}");
        let r = extract_range(&raw).expect("command present");
        prop_assert!(parse_sequence(&raw[r.clone()]).is_ok());
        prop_assert!(raw[r].len() >= cmd.len());
    }

    #[test]
    fn valid_results_round_trip(raw in "(f|b|l|r|s|w)(,[0-9]{1,3}(\\.[0-9]{1,2})?)?(;(f|b|s|w))*") {
        let r = edgebot_core::translator::TranslationResult::from_raw(raw.clone(), 0.0);
        if r.is_valid() {
            let wire = r.wire().unwrap();
            prop_assert_eq!(parse_sequence(&wire).unwrap(), r.parsed.clone().unwrap());
        }
        prop_assert_eq!(r.is_valid(), r.parsed.is_some());
    }
}
