//! Natural language to command strings.
//!
//! A [`Backend`] produces raw text for an utterance; [`translate`] pulls the
//! command string out of it and validates it.

mod backend;
mod extract;
mod http;
mod prompt;
mod rules;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::command::{parse_sequence, CommandSequence, ParseDiagnostic};

pub use backend::{
    Backend, BackendConfig, BackendKind, FixtureBackend, Recorded, Request, RuleBackend, TranslateError,
};
pub use extract::{extract_command, extract_range};
pub use http::{
    chat_request_body, completion_request_body, LocalServerBackend, RemoteChatBackend, Transport, UreqTransport,
};
pub use prompt::{PromptTemplate, RenderedPrompt};
pub use rules::{rule_sequence, rule_translate, DEFAULT_STEP_CM, DEFAULT_TURN_DEG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationResult {
    /// Backend output exactly as received.
    pub raw_output: String,
    /// The command string found in `raw_output`, if any.
    pub extracted: Option<String>,
    pub parsed: Option<CommandSequence>,
    pub diagnostics: Vec<ParseDiagnostic>,
    pub verdict: Verdict,
    pub latency_s: f64,
}

impl TranslationResult {
    /// Validates raw backend text.
    pub fn from_raw(raw_output: String, latency_s: f64) -> Self {
        let extracted = extract_command(&raw_output).map(str::to_owned);
        // Re-parse whatever was found, or the whole trimmed text so the
        // diagnostics point at something.
        let candidate = extracted.as_deref().unwrap_or(raw_output.trim());
        let (parsed, diagnostics) = match parse_sequence(candidate) {
            Ok(seq) => (Some(seq), Vec::new()),
            Err(d) => (None, vec![d]),
        };
        let verdict = if parsed.is_some() { Verdict::Valid } else { Verdict::Invalid };
        Self { raw_output, extracted, parsed, diagnostics, verdict, latency_s }
    }

    pub fn is_valid(&self) -> bool {
        self.verdict == Verdict::Valid
    }

    /// Canonical wire form of the parsed sequence.
    pub fn wire(&self) -> Option<String> {
        self.parsed.as_ref().map(CommandSequence::to_string)
    }
}

pub fn translate(
    backend: &dyn Backend,
    template: &PromptTemplate,
    utterance: &str,
) -> Result<TranslationResult, TranslateError> {
    translate_trial(backend, template, utterance, 0)
}

/// As [`translate`], for trial `trial` of a repeated evaluation.
pub fn translate_trial(
    backend: &dyn Backend,
    template: &PromptTemplate,
    utterance: &str,
    trial: usize,
) -> Result<TranslationResult, TranslateError> {
    if utterance.trim().is_empty() {
        return Err(TranslateError::EmptyUtterance);
    }
    let prompt = template.render(utterance);
    let start = Instant::now();
    let raw = backend.complete(&Request { utterance, prompt: &prompt, trial })?;
    Ok(TranslationResult::from_raw(raw, start.elapsed().as_secs_f64()))
}
