//! Output validation: format conformance, duplication, term grounding and
//! declarative expectations over the enhanced dataset.

mod dedup;
mod expect;
mod format;
mod grounding;

pub use dedup::{detect_duplicate_pairs, detect_duplicates, jaccard, normalize_text, shingles, DedupConfig, DuplicatePair, TextOutput};
pub use expect::{load_rules, parse_rules, run_expectations, ExpectationReport, Rule, RuleFailure, RuleResult};
pub use format::{validate_format, FormatOutcome, OutputSchema, ParsedOutput};
pub use grounding::{content_terms, flag_hallucinations, GroundingConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use crate::prompt::Severity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingKind {
    Format,
    Duplicate,
    Hallucination,
    Expectation,
}

impl FindingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingKind::Format => "format",
            FindingKind::Duplicate => "duplicate",
            FindingKind::Hallucination => "hallucination",
            FindingKind::Expectation => "expectation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFinding {
    pub item_id: String,
    pub kind: FindingKind,
    pub severity: Severity,
    /// Short machine-readable cause, e.g. `missing_key` or `near_duplicate`.
    pub code: String,
    pub detail: String,
    /// Offending keys, values, terms or paired item ids; never empty.
    pub evidence: Vec<String>,
}

impl ValidationFinding {
    pub(crate) fn new(
        item_id: impl Into<String>,
        kind: FindingKind,
        severity: Severity,
        code: &str,
        detail: impl Into<String>,
        evidence: Vec<String>,
    ) -> Self {
        debug_assert!(!evidence.is_empty(), "finding without evidence");
        Self {
            item_id: item_id.into(),
            kind,
            severity,
            code: code.to_string(),
            detail: detail.into(),
            evidence,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

/// Orders findings by item id, then kind, then code and evidence.
pub fn sort_findings(findings: &mut [ValidationFinding]) {
    findings.sort_by(|a, b| {
        (&a.item_id, a.kind, &a.code, &a.evidence).cmp(&(&b.item_id, b.kind, &b.code, &b.evidence))
    });
}

pub fn write_findings_csv(findings: &[ValidationFinding], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["item_id", "kind", "severity", "code", "detail", "evidence"])?;
    for f in findings {
        let severity = match f.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        w.write_record([
            f.item_id.as_str(),
            f.kind.as_str(),
            severity,
            f.code.as_str(),
            f.detail.as_str(),
            f.evidence.join(";").as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("flush findings", e))?;
    Ok(())
}

/// Human-readable counts per kind and severity.
pub fn findings_summary(findings: &[ValidationFinding]) -> String {
    let mut counts = std::collections::BTreeMap::<(FindingKind, Severity), usize>::new();
    for f in findings {
        *counts.entry((f.kind, f.severity)).or_default() += 1;
    }
    let mut out = format!("{} finding(s)\n", findings.len());
    for ((kind, sev), n) in counts {
        let sev = if sev == Severity::Error { "error" } else { "warning" };
        out.push_str(&format!("  {:<14} {:<8} {n}\n", kind.as_str(), sev));
    }
    out
}
