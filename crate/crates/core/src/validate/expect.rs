//! Declarative rules over flat dataset rows, loaded from a TOML file of
//! `[[rule]]` tables:
//!
//! ```toml
//! [[rule]]
//! kind = "value_in_set"
//! field = "labels.maintenance"
//! values = ["corrective", "adaptive", "perfective"]
//!
//! [[rule]]
//! kind = "row_count_between"
//! min = 1
//! max = 10000
//! ```
//!
//! Null cells (missing or empty) only fail `non_null`; the other field rules skip them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{FindingKind, Severity, ValidationFinding};
use crate::error::{Error, Result};

pub type Row = BTreeMap<String, Option<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rule {
    ValueInSet { field: String, values: Vec<String> },
    MatchesRegex { field: String, pattern: String },
    NonNull { field: String },
    Unique { field: String },
    NumericRange {
        field: String,
        #[serde(default)]
        min: Option<f64>,
        #[serde(default)]
        max: Option<f64>,
    },
    RowCountBetween { min: u64, max: u64 },
}

impl Rule {
    pub fn field(&self) -> Option<&str> {
        match self {
            Rule::ValueInSet { field, .. }
            | Rule::MatchesRegex { field, .. }
            | Rule::NonNull { field }
            | Rule::Unique { field }
            | Rule::NumericRange { field, .. } => Some(field),
            Rule::RowCountBetween { .. } => None,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::ValueInSet { field, values } => write!(f, "{field} in {{{}}}", values.join(", ")),
            Rule::MatchesRegex { field, pattern } => write!(f, "{field} matches /{pattern}/"),
            Rule::NonNull { field } => write!(f, "{field} is not null"),
            Rule::Unique { field } => write!(f, "{field} is unique"),
            Rule::NumericRange { field, min, max } => {
                let lo = min.map_or("-inf".to_string(), |v| v.to_string());
                let hi = max.map_or("inf".to_string(), |v| v.to_string());
                write!(f, "{field} in [{lo}, {hi}]")
            }
            Rule::RowCountBetween { min, max } => write!(f, "row count in [{min}, {max}]"),
        }
    }
}

#[derive(Deserialize)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<Rule>,
}

pub fn parse_rules(text: &str) -> Result<Vec<Rule>> {
    let file: RuleFile = toml::from_str(text).map_err(|e| Error::Config(format!("rules: {e}")))?;
    Ok(file.rule)
}

pub fn load_rules(path: &Path) -> Result<Vec<Rule>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    parse_rules(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFailure {
    /// Zero-based row index.
    pub row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleResult {
    pub rule: Rule,
    pub description: String,
    pub passed: bool,
    pub failures: Vec<RuleFailure>,
    /// Set for dataset-level rules such as the row count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    pub passed: bool,
    pub rows: usize,
    pub results: Vec<RuleResult>,
}

enum Compiled<'a> {
    Plain(&'a Rule),
    Regex(&'a Rule, Regex),
}

/// Evaluates `rules` over `rows`. A rule naming a field that no row has is a
/// configuration error raised before anything is evaluated.
pub fn run_expectations(rows: &[Row], rules: &[Rule]) -> Result<ExpectationReport> {
    let known: BTreeSet<&str> = rows.iter().flat_map(|r| r.keys().map(String::as_str)).collect();
    let mut compiled = Vec::with_capacity(rules.len());
    for rule in rules {
        if let Some(field) = rule.field() {
            if !rows.is_empty() && !known.contains(field) {
                return Err(Error::Config(format!("rule `{rule}` references unknown field `{field}`")));
            }
        }
        match rule {
            Rule::MatchesRegex { pattern, .. } => {
                let re = Regex::new(pattern).map_err(|e| Error::Config(format!("rule `{rule}`: {e}")))?;
                compiled.push(Compiled::Regex(rule, re));
            }
            Rule::NumericRange { min: Some(lo), max: Some(hi), .. } if lo > hi => {
                return Err(Error::Config(format!("rule `{rule}`: min exceeds max")));
            }
            Rule::RowCountBetween { min, max } if min > max => {
                return Err(Error::Config(format!("rule `{rule}`: min exceeds max")));
            }
            _ => compiled.push(Compiled::Plain(rule)),
        }
    }

    let cell = |row: &Row, field: &str| -> Option<String> {
        row.get(field).cloned().flatten().filter(|v| !v.trim().is_empty())
    };
    let fail = |i: usize, row: &Row, value: Option<String>| RuleFailure {
        row: i,
        item_id: row.get("item_id").cloned().flatten(),
        value,
    };

    let mut results = Vec::new();
    for c in &compiled {
        let rule = match c {
            Compiled::Plain(r) | Compiled::Regex(r, _) => *r,
        };
        let mut failures = Vec::new();
        let mut observed = None;
        match (rule, c) {
            (Rule::ValueInSet { field, values }, _) => {
                for (i, row) in rows.iter().enumerate() {
                    if let Some(v) = cell(row, field) {
                        if !values.contains(&v) {
                            failures.push(fail(i, row, Some(v)));
                        }
                    }
                }
            }
            (Rule::MatchesRegex { field, .. }, Compiled::Regex(_, re)) => {
                for (i, row) in rows.iter().enumerate() {
                    if let Some(v) = cell(row, field) {
                        if !re.is_match(&v) {
                            failures.push(fail(i, row, Some(v)));
                        }
                    }
                }
            }
            (Rule::NonNull { field }, _) => {
                for (i, row) in rows.iter().enumerate() {
                    if cell(row, field).is_none() {
                        failures.push(fail(i, row, None));
                    }
                }
            }
            (Rule::Unique { field }, _) => {
                let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
                for (i, row) in rows.iter().enumerate() {
                    if let Some(v) = cell(row, field) {
                        groups.entry(v).or_default().push(i);
                    }
                }
                for (v, idx) in groups.into_iter().filter(|(_, idx)| idx.len() > 1) {
                    for i in idx {
                        failures.push(fail(i, &rows[i], Some(v.clone())));
                    }
                }
                failures.sort_by_key(|f| f.row);
            }
            (Rule::NumericRange { field, min, max }, _) => {
                for (i, row) in rows.iter().enumerate() {
                    if let Some(v) = cell(row, field) {
                        let ok = v
                            .trim()
                            .parse::<f64>()
                            .is_ok_and(|x| min.is_none_or(|lo| x >= lo) && max.is_none_or(|hi| x <= hi));
                        if !ok {
                            failures.push(fail(i, row, Some(v)));
                        }
                    }
                }
            }
            (Rule::RowCountBetween { min, max }, _) => {
                let n = rows.len() as u64;
                observed = Some(n.to_string());
                if n < *min || n > *max {
                    failures.push(RuleFailure {
                        row: rows.len(),
                        item_id: None,
                        value: Some(n.to_string()),
                    });
                }
            }
            (Rule::MatchesRegex { .. }, Compiled::Plain(_)) => unreachable!("regex rules are compiled"),
        }
        results.push(RuleResult {
            description: rule.to_string(),
            rule: rule.clone(),
            passed: failures.is_empty(),
            failures,
            observed,
        });
    }
    Ok(ExpectationReport {
        passed: results.iter().all(|r| r.passed),
        rows: rows.len(),
        results,
    })
}

impl ExpectationReport {
    /// One error finding per failing row; dataset-level failures use `*` as the item id.
    pub fn findings(&self) -> Vec<ValidationFinding> {
        let mut out = Vec::new();
        for r in self.results.iter().filter(|r| !r.passed) {
            for f in &r.failures {
                let item = f.item_id.clone().unwrap_or_else(|| {
                    if f.row >= self.rows {
                        "*".to_string()
                    } else {
                        format!("row {}", f.row)
                    }
                });
                let value = f.value.clone().unwrap_or_else(|| "null".into());
                out.push(ValidationFinding::new(
                    item,
                    FindingKind::Expectation,
                    Severity::Error,
                    "rule_failed",
                    format!("{} (value: {value})", r.description),
                    vec![value],
                ));
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "expectations: {} ({} rule(s), {} row(s))\n",
            if self.passed { "PASS" } else { "FAIL" },
            self.results.len(),
            self.rows
        );
        for r in &self.results {
            out.push_str(&format!(
                "  [{}] {}",
                if r.passed { "pass" } else { "fail" },
                r.description
            ));
            if let Some(o) = &r.observed {
                out.push_str(&format!(" (observed {o})"));
            }
            if !r.passed {
                let ids: Vec<String> = r
                    .failures
                    .iter()
                    .map(|f| match (&f.item_id, &f.value) {
                        (Some(id), Some(v)) => format!("{id}={v}"),
                        (Some(id), None) => id.clone(),
                        (None, Some(v)) => format!("row {}={v}", f.row),
                        (None, None) => format!("row {}", f.row),
                    })
                    .collect();
                out.push_str(&format!(": {}", ids.join(", ")));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rule", "passed", "row", "item_id", "value"])?;
        for r in &self.results {
            if r.passed {
                w.write_record([r.description.as_str(), "true", "", "", r.observed.as_deref().unwrap_or("")])?;
            }
            for f in &r.failures {
                w.write_record([
                    r.description.as_str(),
                    "false",
                    &f.row.to_string(),
                    f.item_id.as_deref().unwrap_or(""),
                    f.value.as_deref().unwrap_or(""),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("flush expectation report", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(&str, Option<&str>)]) -> Row {
        pairs.iter().map(|(k, v)| (k.to_string(), v.map(str::to_string))).collect()
    }

    fn data() -> Vec<Row> {
        vec![
            row(&[("item_id", Some("a")), ("labels.kind", Some("bug")), ("fields.n", Some("3"))]),
            row(&[("item_id", Some("b")), ("labels.kind", Some("feature")), ("fields.n", Some("7"))]),
            row(&[("item_id", Some("c")), ("labels.kind", None), ("fields.n", Some("0"))]),
        ]
    }

    #[test]
    fn empty_rule_set_passes() {
        let r = run_expectations(&data(), &[]).unwrap();
        assert!(r.passed);
        assert!(r.findings().is_empty());
    }

    #[test]
    fn parsed_rules_evaluate() {
        let rules = parse_rules(
            r#"
            [[rule]]
            kind = "value_in_set"
            field = "labels.kind"
            values = ["bug", "feature"]

            [[rule]]
            kind = "numeric_range"
            field = "fields.n"
            min = 0
            max = 5

            [[rule]]
            kind = "non_null"
            field = "labels.kind"

            [[rule]]
            kind = "matches_regex"
            field = "item_id"
            pattern = "^[a-z]$"

            [[rule]]
            kind = "row_count_between"
            min = 1
            max = 3
            "#,
        )
        .unwrap();
        let r = run_expectations(&data(), &rules).unwrap();
        let passed: Vec<bool> = r.results.iter().map(|x| x.passed).collect();
        assert_eq!(passed, vec![true, false, false, true, true]);
        assert_eq!(r.results[1].failures[0].value.as_deref(), Some("7"));
        assert_eq!(r.results[2].failures[0].item_id.as_deref(), Some("c"));
        assert!(!r.passed);
        assert!(r.summary().contains("b=7"));
    }

    #[test]
    fn unique_lists_both_rows() {
        let mut rows = data();
        rows.push(row(&[("item_id", Some("a")), ("labels.kind", Some("bug")), ("fields.n", Some("1"))]));
        let r = run_expectations(&rows, &[Rule::Unique { field: "item_id".into() }]).unwrap();
        let dup_rows: Vec<usize> = r.results[0].failures.iter().map(|f| f.row).collect();
        assert_eq!(dup_rows, vec![0, 3]);
    }

    #[test]
    fn unknown_field_is_config_error() {
        let err = run_expectations(&data(), &[Rule::NonNull { field: "labels.nope".into() }]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(parse_rules("[[rule]]\nkind = \"bogus\"\n").is_err());
    }
}
