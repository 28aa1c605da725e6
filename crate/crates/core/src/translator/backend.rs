use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::http::{LocalServerBackend, RemoteChatBackend, Transport, UreqTransport};
use super::prompt::RenderedPrompt;
use super::rules::rule_translate;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranslateError {
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("request timed out after {0:.1} s")]
    Timeout(f64),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: missing {0}")]
    Decode(String),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl TranslateError {
    /// Worth one retry.
    pub fn is_transient(&self) -> bool {
        matches!(self, TranslateError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteChat,
    LocalServer,
    RuleBased,
    Fixture,
}

/// What a backend is asked to translate.
#[derive(Debug, Clone, Copy)]
pub struct Request<'a> {
    pub utterance: &'a str,
    pub prompt: &'a RenderedPrompt,
    /// Zero-based trial index; only replay backends look at it.
    pub trial: usize,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn kind(&self) -> BackendKind;
    /// Raw model text for the request.
    fn complete(&self, req: &Request<'_>) -> Result<String, TranslateError>;
}

/// The deterministic pattern translator. Emits an empty string when the
/// utterance is outside its rules.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBackend;

impl Backend for RuleBackend {
    fn id(&self) -> &str {
        "rule"
    }

    fn kind(&self) -> BackendKind {
        BackendKind::RuleBased
    }

    fn complete(&self, req: &Request<'_>) -> Result<String, TranslateError> {
        Ok(rule_translate(req.utterance).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Recorded {
    Same(String),
    PerTrial(Vec<String>),
}

/// Replays recorded raw outputs keyed by utterance.
///
/// A list value gives one output per trial and wraps around when there are
/// more trials than entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureBackend {
    id: String,
    outputs: BTreeMap<String, Recorded>,
}

impl FixtureBackend {
    pub fn new(id: impl Into<String>, outputs: BTreeMap<String, Recorded>) -> Result<Self, TranslateError> {
        if let Some((k, _)) = outputs.iter().find(|(_, v)| matches!(v, Recorded::PerTrial(l) if l.is_empty())) {
            return Err(TranslateError::Fixture(format!("no outputs recorded for {k:?}")));
        }
        Ok(Self { id: id.into(), outputs })
    }

    pub fn from_json(id: impl Into<String>, json: &str) -> Result<Self, TranslateError> {
        let outputs = serde_json::from_str(json).map_err(|e| TranslateError::Fixture(e.to_string()))?;
        Self::new(id, outputs)
    }

    pub fn load(path: &Path) -> Result<Self, TranslateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TranslateError::Fixture(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_json(format!("fixture:{stem}"), &text)
    }

    fn lookup(&self, utterance: &str) -> Option<&Recorded> {
        self.outputs.get(utterance).or_else(|| {
            let key = utterance.trim();
            self.outputs.iter().find(|(k, _)| k.trim().eq_ignore_ascii_case(key)).map(|(_, v)| v)
        })
    }
}

impl Backend for FixtureBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Fixture
    }

    fn complete(&self, req: &Request<'_>) -> Result<String, TranslateError> {
        match self.lookup(req.utterance) {
            Some(Recorded::Same(s)) => Ok(s.clone()),
            Some(Recorded::PerTrial(list)) => Ok(list[req.trial % list.len()].clone()),
            None => Err(TranslateError::Fixture(format!("no recorded output for {:?}", req.utterance))),
        }
    }
}

fn default_timeout() -> f64 {
    30.0
}
fn default_chat_endpoint() -> String {
    "https://api.openai.com".into()
}
fn default_chat_path() -> String {
    "/v1/chat/completions".into()
}
fn default_chat_model() -> String {
    "gpt-4-turbo".into()
}
fn default_credential_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_local_endpoint() -> String {
    "http://127.0.0.1:8080".into()
}
fn default_local_path() -> String {
    "/completion".into()
}
fn default_local_model() -> String {
    "llama-2-7b.Q5_K_M".into()
}

/// Backend selection as stored in configuration files. Secrets are never
/// stored; only the name of the environment variable holding them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    RuleBased,
    RemoteChat {
        #[serde(default = "default_chat_endpoint")]
        endpoint: String,
        #[serde(default = "default_chat_path")]
        path: String,
        #[serde(default = "default_chat_model")]
        model_name: String,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
        #[serde(default = "default_credential_env")]
        credential_env: String,
    },
    LocalServer {
        #[serde(default = "default_local_endpoint")]
        endpoint: String,
        #[serde(default = "default_local_path")]
        path: String,
        #[serde(default = "default_local_model")]
        model_name: String,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
        #[serde(default)]
        credential_env: Option<String>,
    },
    Fixture {
        path: PathBuf,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::RuleBased
    }
}

impl BackendConfig {
    pub fn remote_default() -> Self {
        BackendConfig::RemoteChat {
            endpoint: default_chat_endpoint(),
            path: default_chat_path(),
            model_name: default_chat_model(),
            timeout_s: default_timeout(),
            credential_env: default_credential_env(),
        }
    }

    pub fn local_default() -> Self {
        BackendConfig::LocalServer {
            endpoint: default_local_endpoint(),
            path: default_local_path(),
            model_name: default_local_model(),
            timeout_s: default_timeout(),
            credential_env: None,
        }
    }

    /// Parses the command-line shorthand `rule`, `remote`, `local` or
    /// `fixture:<path>`.
    pub fn from_shorthand(s: &str) -> Result<Self, TranslateError> {
        match s {
            "rule" | "rule_based" => Ok(BackendConfig::RuleBased),
            "remote" | "remote_chat" => Ok(Self::remote_default()),
            "local" | "local_server" => Ok(Self::local_default()),
            _ => match s.strip_prefix("fixture:") {
                Some(p) if !p.is_empty() => Ok(BackendConfig::Fixture { path: p.into() }),
                _ => Err(TranslateError::Config(format!(
                    "unknown backend {s:?}; expected rule, remote, local or fixture:<path>"
                ))),
            },
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            BackendConfig::RuleBased => BackendKind::RuleBased,
            BackendConfig::RemoteChat { .. } => BackendKind::RemoteChat,
            BackendConfig::LocalServer { .. } => BackendKind::LocalServer,
            BackendConfig::Fixture { .. } => BackendKind::Fixture,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Backend>, TranslateError> {
        self.build_with(Arc::new(UreqTransport))
    }

    /// Builds the backend, sending any HTTP through `transport`.
    pub fn build_with(&self, transport: Arc<dyn Transport>) -> Result<Arc<dyn Backend>, TranslateError> {
        fn timeout(s: f64) -> Result<Duration, TranslateError> {
            if s.is_finite() && s > 0.0 {
                Ok(Duration::from_secs_f64(s))
            } else {
                Err(TranslateError::Config(format!("timeout must be positive, got {s}")))
            }
        }
        Ok(match self {
            BackendConfig::RuleBased => Arc::new(RuleBackend),
            BackendConfig::Fixture { path } => Arc::new(FixtureBackend::load(path)?),
            BackendConfig::RemoteChat { endpoint, path, model_name, timeout_s, credential_env } => {
                Arc::new(RemoteChatBackend {
                    url: join_url(endpoint, path),
                    model_name: model_name.clone(),
                    timeout: timeout(*timeout_s)?,
                    credential_env: credential_env.clone(),
                    transport,
                })
            }
            BackendConfig::LocalServer { endpoint, path, model_name, timeout_s, credential_env } => {
                Arc::new(LocalServerBackend {
                    url: join_url(endpoint, path),
                    model_name: model_name.clone(),
                    timeout: timeout(*timeout_s)?,
                    credential_env: credential_env.clone(),
                    transport,
                })
            }
        })
    }
}

fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translator::PromptTemplate;

    #[test]
    fn shorthand() {
        assert_eq!(BackendConfig::from_shorthand("rule").unwrap(), BackendConfig::RuleBased);
        assert_eq!(
            BackendConfig::from_shorthand("fixture:a/b.json").unwrap(),
            BackendConfig::Fixture { path: "a/b.json".into() }
        );
        assert_eq!(BackendConfig::from_shorthand("remote").unwrap().kind(), BackendKind::RemoteChat);
        assert!(BackendConfig::from_shorthand("fixture:").is_err());
        assert!(BackendConfig::from_shorthand("gpt").is_err());
    }

    #[test]
    fn config_json_shape() {
        let c: BackendConfig = serde_json::from_str(r#"{"kind":"local_server","timeout_s":5}"#).unwrap();
        match c {
            BackendConfig::LocalServer { endpoint, path, timeout_s, credential_env, .. } => {
                assert_eq!(endpoint, "http://127.0.0.1:8080");
                assert_eq!(path, "/completion");
                assert_eq!(timeout_s, 5.0);
                assert_eq!(credential_env, None);
            }
            other => panic!("{other:?}"),
        }
        let rule: BackendConfig = serde_json::from_str(r#"{"kind":"rule_based"}"#).unwrap();
        assert_eq!(rule, BackendConfig::RuleBased);
        let bad = BackendConfig::RemoteChat {
            endpoint: "http://x".into(),
            path: "/".into(),
            model_name: "m".into(),
            timeout_s: 0.0,
            credential_env: "K".into(),
        };
        assert!(matches!(bad.build(), Err(TranslateError::Config(_))));
    }

    #[test]
    fn urls_join_cleanly() {
        assert_eq!(join_url("http://h:1/", "/v1/x"), "http://h:1/v1/x");
        assert_eq!(join_url("http://h:1", "completion"), "http://h:1/completion");
    }

    #[test]
    fn fixture_replays_per_trial() {
        let f = FixtureBackend::from_json("fx", r#"{"Move forward 50 cm": ["f,50", "f,450;f,10", "f,10"], "Twirl": "r,360"}"#)
            .unwrap();
        let prompt = PromptTemplate::default().render("");
        let get = |u: &str, trial| f.complete(&Request { utterance: u, prompt: &prompt, trial });
        assert_eq!(get("Move forward 50 cm", 1).unwrap(), "f,450;f,10");
        assert_eq!(get("Move forward 50 cm", 3).unwrap(), "f,50");
        assert_eq!(get("twirl", 2).unwrap(), "r,360");
        assert!(matches!(get("Turn", 0), Err(TranslateError::Fixture(_))));
        assert!(FixtureBackend::from_json("fx", r#"{"a": []}"#).is_err());
    }
}
