use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{Catalog, TrialVerdict};
use crate::command::ParseDiagnostic;
use crate::translator::BackendKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub entry_id: u32,
    /// One-based, as in the printed table.
    pub trial: usize,
    pub backend: String,
    pub raw_output: String,
    pub parsed: Option<String>,
    pub diagnostics: Vec<ParseDiagnostic>,
    pub verdict: TrialVerdict,
    pub latency_s: f64,
    /// Backend failure text, if the trial never produced output.
    pub error: Option<String>,
}

/// Pass count over trial count, kept as integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub passes: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.passes as f64 / self.total as f64
        }
    }

    /// Whole percent, truncated: 59/69 reports as 85.
    pub fn reported_percent(&self) -> usize {
        (100 * self.passes).checked_div(self.total).unwrap_or(0)
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} = {:.1}% (reported {}%)",
            self.passes,
            self.total,
            100.0 * self.fraction(),
            self.reported_percent()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub backend: String,
    pub backend_kind: BackendKind,
    pub date: String,
    pub seed: u64,
    pub trials: usize,
    pub entries: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub entry_id: u32,
    pub ambiguous: bool,
    pub verdicts: Vec<TrialVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub matrix: Vec<MatrixRow>,
    pub accuracy: Accuracy,
    pub accuracy_unambiguous: Accuracy,
    pub accuracy_ambiguous: Accuracy,
    pub records: Vec<TrialRecord>,
}

impl EvalReport {
    pub(super) fn assemble(metadata: ReportMetadata, catalog: &Catalog, records: Vec<TrialRecord>) -> Self {
        let matrix: Vec<MatrixRow> = catalog
            .entries
            .iter()
            .map(|e| {
                let mut rs: Vec<&TrialRecord> = records.iter().filter(|r| r.entry_id == e.id).collect();
                rs.sort_by_key(|r| r.trial);
                MatrixRow { entry_id: e.id, ambiguous: e.ambiguous, verdicts: rs.iter().map(|r| r.verdict).collect() }
            })
            .collect();
        let count = |pick: &dyn Fn(&MatrixRow) -> bool| {
            let rows = matrix.iter().filter(|r| pick(r));
            let (mut passes, mut total) = (0, 0);
            for r in rows {
                total += r.verdicts.len();
                passes += r.verdicts.iter().filter(|v| **v == TrialVerdict::Pass).count();
            }
            Accuracy { passes, total }
        };
        Self {
            accuracy: count(&|_| true),
            accuracy_unambiguous: count(&|r| !r.ambiguous),
            accuracy_ambiguous: count(&|r| r.ambiguous),
            metadata,
            matrix,
            records,
        }
    }

    pub fn verdict(&self, entry_id: u32, trial: usize) -> Option<TrialVerdict> {
        let row = self.matrix.iter().find(|r| r.entry_id == entry_id)?;
        row.verdicts.get(trial.checked_sub(1)?).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Zeroes timing so renders of replayed runs compare byte for byte.
    pub fn without_latency(mut self) -> Self {
        for r in &mut self.records {
            r.latency_s = 0.0;
        }
        self
    }
}

/// Verdict matrix shaped like the published table, followed by accuracy
/// lines. Ambiguous entries are starred.
pub fn render_table(report: &EvalReport) -> String {
    let m = &report.metadata;
    let mut out = String::new();
    let _ = writeln!(out, "backend: {} ({:?})", m.backend, m.backend_kind);
    let _ = writeln!(out, "date: {}  seed: {}  trials: {}", m.date, m.seed, m.trials);
    if !m.flags.is_empty() {
        let _ = writeln!(out, "flags: {}", m.flags.join(", "));
    }
    out.push('\n');
    let mut header = format!("{:>4} ", "No.");
    for t in 1..=m.trials {
        let _ = write!(header, "| {:<7} ", format!("Trial {t}"));
    }
    let _ = writeln!(out, "{}", header.trim_end());
    let _ = writeln!(out, "{}", "-".repeat(5 + 10 * m.trials));
    for row in &report.matrix {
        let label = format!("{}{}", row.entry_id, if row.ambiguous { "*" } else { "" });
        let mut line = format!("{label:>4} ");
        for v in &row.verdicts {
            let _ = write!(line, "| {:<7} ", v.as_str());
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out.push('\n');
    let _ = writeln!(out, "accuracy (all entries):       {}", report.accuracy);
    let _ = writeln!(out, "accuracy (unambiguous only):  {}", report.accuracy_unambiguous);
    let _ = writeln!(out, "accuracy (ambiguous only):    {}", report.accuracy_ambiguous);
    let _ = writeln!(out, "* ambiguous entry");
    out
}
