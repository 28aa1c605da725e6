//! HTTP clients for hosted chat models and local completion servers.

use std::io;
use std::sync::Arc;
use std::time::Duration;

use log::{debug, warn};
use serde_json::{json, Value};

use super::backend::{Backend, BackendKind, Request, TranslateError};
use super::prompt::RenderedPrompt;

/// Sends one JSON POST and returns the decoded JSON body.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TranslateError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UreqTransport;

fn map_ureq(e: ureq::Error, timeout: Duration) -> TranslateError {
    match e {
        ureq::Error::Timeout(_) => TranslateError::Timeout(timeout.as_secs_f64()),
        ureq::Error::Io(ref io) if matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) => {
            TranslateError::Timeout(timeout.as_secs_f64())
        }
        other => TranslateError::Transport(other.to_string()),
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TranslateError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| map_ureq(e, timeout))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| map_ureq(e, timeout))?;
        if !(200..300).contains(&status) {
            let mut body = text;
            body.truncate(512);
            return Err(TranslateError::Http { status, body });
        }
        serde_json::from_str(&text).map_err(|_| TranslateError::Decode("JSON body".into()))
    }
}

fn post_with_retry(
    transport: &dyn Transport,
    url: &str,
    bearer: Option<&str>,
    body: &Value,
    timeout: Duration,
) -> Result<Value, TranslateError> {
    match transport.post_json(url, bearer, body, timeout) {
        Err(e) if e.is_transient() => {
            warn!("{url}: {e}; retrying once");
            transport.post_json(url, bearer, body, timeout)
        }
        other => other,
    }
}

/// Walks `path` (object keys and array indices) and returns the string
/// found there, naming the first missing step otherwise.
fn string_at(value: &Value, path: &[&str]) -> Result<String, TranslateError> {
    let mut cur = value;
    let mut shown = String::new();
    for step in path {
        match step.parse::<usize>() {
            Ok(i) => shown.push_str(&format!("[{i}]")),
            Err(_) => {
                if !shown.is_empty() {
                    shown.push('.');
                }
                shown.push_str(step);
            }
        }
        let next = match step.parse::<usize>() {
            Ok(i) => cur.get(i),
            Err(_) => cur.get(*step),
        };
        cur = next.ok_or_else(|| TranslateError::Decode(shown.clone()))?;
    }
    cur.as_str().map(str::to_owned).ok_or(TranslateError::Decode(shown))
}

fn credential(var: &str) -> Result<String, TranslateError> {
    match std::env::var(var) {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(TranslateError::MissingCredential(var.to_string())),
    }
}

pub fn chat_request_body(model: &str, prompt: &RenderedPrompt) -> Value {
    let mut messages = vec![json!({"role": "system", "content": prompt.system})];
    for (input, output) in &prompt.examples {
        messages.push(json!({"role": "user", "content": input}));
        messages.push(json!({"role": "assistant", "content": output}));
    }
    messages.push(json!({"role": "user", "content": prompt.user}));
    json!({"model": model, "temperature": 0, "messages": messages})
}

pub fn completion_request_body(model: &str, prompt: &RenderedPrompt) -> Value {
    json!({
        "model": model,
        "prompt": prompt.completion_text(),
        "temperature": 0,
        "n_predict": 128,
        "stop": ["\nInput:"],
    })
}

/// Chat-completion client (`choices[0].message.content`).
pub struct RemoteChatBackend {
    pub url: String,
    pub model_name: String,
    pub timeout: Duration,
    pub credential_env: String,
    pub transport: Arc<dyn Transport>,
}

impl Backend for RemoteChatBackend {
    fn id(&self) -> &str {
        &self.model_name
    }

    fn kind(&self) -> BackendKind {
        BackendKind::RemoteChat
    }

    fn complete(&self, req: &Request<'_>) -> Result<String, TranslateError> {
        let token = credential(&self.credential_env)?;
        let body = chat_request_body(&self.model_name, req.prompt);
        debug!("POST {} ({})", self.url, self.model_name);
        let resp = post_with_retry(self.transport.as_ref(), &self.url, Some(&token), &body, self.timeout)?;
        string_at(&resp, &["choices", "0", "message", "content"])
    }
}

/// Local completion server client (`content`). A credential is sent only
/// when configured.
pub struct LocalServerBackend {
    pub url: String,
    pub model_name: String,
    pub timeout: Duration,
    pub credential_env: Option<String>,
    pub transport: Arc<dyn Transport>,
}

impl Backend for LocalServerBackend {
    fn id(&self) -> &str {
        &self.model_name
    }

    fn kind(&self) -> BackendKind {
        BackendKind::LocalServer
    }

    fn complete(&self, req: &Request<'_>) -> Result<String, TranslateError> {
        let token = self.credential_env.as_deref().map(credential).transpose()?;
        let body = completion_request_body(&self.model_name, req.prompt);
        debug!("POST {} ({})", self.url, self.model_name);
        let resp = post_with_retry(self.transport.as_ref(), &self.url, token.as_deref(), &body, self.timeout)?;
        string_at(&resp, &["content"])
    }
}
