//! Pass/fail evaluation of translation backends over a fixed utterance
//! catalog.

mod report;
mod rubric;

use std::collections::BTreeSet;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{parse_sequence, CommandSequence};
use crate::translator::{translate_trial, Backend, BackendKind, PromptTemplate, TranslationResult};

pub use report::{render_table, Accuracy, EvalReport, ReportMetadata, TrialRecord};
pub use rubric::{ideal_path, Alternative, JudgeOptions, Rule, Step, StepVerb};

pub const DEFAULT_TRIALS: usize = 3;
const BUILTIN_CATALOG: &str = include_str!("../../data/catalog.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrialVerdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

impl TrialVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialVerdict::Pass => "PASS",
            TrialVerdict::Fail => "FAIL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: u32,
    pub utterance: String,
    #[serde(default)]
    pub ambiguous: bool,
    /// A sequence the rubric accepts, kept for review and self-checks.
    pub example: String,
    /// The entry passes if any applicable alternative accepts.
    pub rubric: Vec<Alternative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub version: u32,
    pub entries: Vec<CatalogEntry>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("catalog is empty")]
    Empty,
    #[error("duplicate entry id {0}")]
    DuplicateId(u32),
    #[error("entry {0} has no rubric")]
    NoRubric(u32),
    #[error("entry {id}: example {example:?} is {problem}")]
    BadExample { id: u32, example: String, problem: &'static str },
}

impl Catalog {
    /// The 23-entry catalog shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_CATALOG).expect("bundled catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let c: Catalog = serde_json::from_str(text)?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Ids are unique, every entry has a rubric, and every example parses
    /// and passes its own rubric with no flags set.
    pub fn check(&self) -> Result<(), CatalogError> {
        if self.entries.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.id) {
                return Err(CatalogError::DuplicateId(e.id));
            }
            if e.rubric.is_empty() {
                return Err(CatalogError::NoRubric(e.id));
            }
            let bad = |problem| CatalogError::BadExample { id: e.id, example: e.example.clone(), problem };
            let seq = parse_sequence(&e.example).map_err(|_| bad("not valid syntax"))?;
            if judge(e, Some(&seq), &JudgeOptions::default()) != TrialVerdict::Pass {
                return Err(bad("rejected by its own rubric"));
            }
        }
        Ok(())
    }

    pub fn entry(&self, id: u32) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// PASS iff the sequence is present and some applicable alternative
/// accepts it.
pub fn judge(entry: &CatalogEntry, parsed: Option<&CommandSequence>, opts: &JudgeOptions) -> TrialVerdict {
    let Some(seq) = parsed else { return TrialVerdict::Fail };
    let pass = entry.rubric.iter().filter(|a| a.applies(opts)).any(|a| a.rule.accepts(seq));
    if pass {
        TrialVerdict::Pass
    } else {
        TrialVerdict::Fail
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub trials: usize,
    /// Recorded in the report. Offline backends are deterministic and do
    /// not consume it.
    pub seed: u64,
    /// Free-form run date for the report metadata.
    pub date: String,
    pub template: PromptTemplate,
    pub judge: JudgeOptions,
    /// Concurrent requests for network backends.
    pub max_in_flight: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            seed: 0,
            date: String::new(),
            template: PromptTemplate::default(),
            judge: JudgeOptions::default(),
            max_in_flight: 4,
        }
    }
}

fn run_one(backend: &dyn Backend, entry: &CatalogEntry, trial: usize, opts: &EvalOptions) -> TrialRecord {
    let outcome = translate_trial(backend, &opts.template, &entry.utterance, trial);
    let (result, error) = match outcome {
        Ok(r) => (r, None),
        Err(e) => (TranslationResult::from_raw(String::new(), 0.0), Some(e.to_string())),
    };
    let verdict = judge(entry, result.parsed.as_ref(), &opts.judge);
    TrialRecord {
        entry_id: entry.id,
        trial: trial + 1,
        backend: backend.id().to_string(),
        raw_output: result.raw_output,
        parsed: result.parsed.map(|s| s.to_string()),
        diagnostics: result.diagnostics,
        verdict,
        latency_s: result.latency_s,
        error,
    }
}

/// Runs every entry `opts.trials` times. Backend errors become FAIL records
/// carrying the error text.
///
/// # Panics
/// If `opts.trials` is zero.
pub fn run_eval(backend: &dyn Backend, catalog: &Catalog, opts: &EvalOptions) -> EvalReport {
    assert!(opts.trials >= 1, "at least one trial is required");
    let jobs: Vec<(&CatalogEntry, usize)> =
        catalog.entries.iter().flat_map(|e| (0..opts.trials).map(move |t| (e, t))).collect();
    let networked = matches!(backend.kind(), BackendKind::RemoteChat | BackendKind::LocalServer);
    let records: Vec<TrialRecord> = if networked && opts.max_in_flight > 1 {
        let width = jobs.len().div_ceil(opts.max_in_flight);
        thread::scope(|s| {
            let handles: Vec<_> = jobs
                .chunks(width)
                .map(|chunk| s.spawn(move || chunk.iter().map(|(e, t)| run_one(backend, e, *t, opts)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("eval worker panicked")).collect()
        })
    } else {
        jobs.iter().map(|(e, t)| run_one(backend, e, *t, opts)).collect()
    };
    let metadata = ReportMetadata {
        backend: backend.id().to_string(),
        backend_kind: backend.kind(),
        date: opts.date.clone(),
        seed: opts.seed,
        trials: opts.trials,
        entries: catalog.entries.len(),
        flags: opts.judge.flags.iter().cloned().collect(),
    };
    EvalReport::assemble(metadata, catalog, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_is_well_formed() {
        let c = Catalog::builtin();
        assert_eq!(c.entries.len(), 23);
        let ids: Vec<u32> = c.entries.iter().map(|e| e.id).collect();
        assert_eq!(ids, (1..=23).collect::<Vec<_>>());
        let ambiguous: Vec<u32> = c.entries.iter().filter(|e| e.ambiguous).map(|e| e.id).collect();
        assert_eq!(ambiguous, vec![10, 22, 23]);
    }

    #[test]
    fn check_rejects_bad_catalogs() {
        let mut c = Catalog::builtin();
        c.entries[1].id = 1;
        assert!(matches!(c.check(), Err(CatalogError::DuplicateId(1))));
        let mut c = Catalog::builtin();
        c.entries[0].example = "f,10".into();
        assert!(matches!(c.check(), Err(CatalogError::BadExample { id: 1, .. })));
        let mut c = Catalog::builtin();
        c.entries[4].rubric.clear();
        assert!(matches!(c.check(), Err(CatalogError::NoRubric(5))));
    }

    #[test]
    fn mirrored_turn_flag() {
        let c = Catalog::builtin();
        let e = c.entry(8).unwrap();
        let left = parse_sequence("l,180").unwrap();
        assert_eq!(judge(e, Some(&left), &JudgeOptions::default()), TrialVerdict::Fail);
        assert_eq!(judge(e, Some(&left), &JudgeOptions::default().with_flag("mirrored_turns")), TrialVerdict::Pass);
    }

    #[test]
    fn unparseable_is_fail() {
        let c = Catalog::builtin();
        assert_eq!(judge(c.entry(1).unwrap(), None, &JudgeOptions::default()), TrialVerdict::Fail);
    }
}
