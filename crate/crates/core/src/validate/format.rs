use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FindingKind, Severity, ValidationFinding};
use crate::model::{LabelSchema, Task};
use crate::prompt::{PromptTemplate, ANSWER_CLOSE, ANSWER_OPEN};

/// Structural expectations for a model's final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSchema {
    /// One expected key per task, named after the task.
    pub tasks: Vec<Task>,
    pub deny_unknown_keys: bool,
    pub rationale_key: Option<String>,
    pub evidence_key: Option<String>,
    /// Accept a plain category string instead of an object (single-task schemas only).
    pub accept_bare_label: bool,
}

impl OutputSchema {
    pub fn from_label_schema(schema: &LabelSchema) -> Self {
        Self {
            tasks: schema.tasks().to_vec(),
            deny_unknown_keys: true,
            rationale_key: Some("rationale".into()),
            evidence_key: Some("evidence".into()),
            accept_bare_label: false,
        }
    }

    /// Bare labels are accepted when the template turns structured output off.
    pub fn for_template(template: &PromptTemplate) -> Self {
        let mut s = Self::from_label_schema(&template.schema);
        s.accept_bare_label = !template.strategy.structured_output && s.tasks.len() == 1;
        s
    }

    fn is_reserved(&self, key: &str) -> bool {
        self.rationale_key.as_deref() == Some(key) || self.evidence_key.as_deref() == Some(key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<String>,
}

/// Either parsed labels or at least one error finding, never both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum FormatOutcome {
    Parsed(ParsedOutput),
    Invalid { findings: Vec<ValidationFinding> },
}

impl FormatOutcome {
    pub fn parsed(&self) -> Option<&ParsedOutput> {
        match self {
            FormatOutcome::Parsed(p) => Some(p),
            FormatOutcome::Invalid { .. } => None,
        }
    }

    pub fn findings(&self) -> &[ValidationFinding] {
        match self {
            FormatOutcome::Parsed(_) => &[],
            FormatOutcome::Invalid { findings } => findings,
        }
    }
}

fn finding(item_id: &str, code: &str, detail: String, evidence: Vec<String>) -> ValidationFinding {
    ValidationFinding::new(item_id, FindingKind::Format, Severity::Error, code, detail, evidence)
}

/// The final answer payload: the last delimited block, or the whole response
/// when it is itself a JSON object.
fn extract_answer(raw: &str) -> Result<&str, String> {
    if let Some(open) = raw.rfind(ANSWER_OPEN) {
        let rest = &raw[open + ANSWER_OPEN.len()..];
        return match rest.find(ANSWER_CLOSE) {
            Some(end) => Ok(strip_fence(rest[..end].trim())),
            None => Err(format!("{ANSWER_OPEN} block is not closed")),
        };
    }
    let t = strip_fence(raw.trim());
    if t.starts_with('{') && t.ends_with('}') {
        return Ok(t);
    }
    Err(format!("no {ANSWER_OPEN} block found"))
}

fn strip_fence(s: &str) -> &str {
    let Some(rest) = s.strip_prefix("```") else { return s };
    let Some(body) = rest.strip_suffix("```") else { return s };
    let body = body.strip_prefix("json").unwrap_or(body);
    body.trim()
}

fn bare_label(item_id: &str, text: &str, schema: &OutputSchema) -> FormatOutcome {
    let task = &schema.tasks[0];
    let label = text.trim().trim_matches(|c| c == '"' || c == '\'').trim();
    if task.has_category(label) {
        let mut labels = BTreeMap::new();
        labels.insert(task.name.clone(), label.to_string());
        FormatOutcome::Parsed(ParsedOutput {
            labels,
            ..ParsedOutput::default()
        })
    } else {
        FormatOutcome::Invalid {
            findings: vec![finding(
                item_id,
                "illegal_category",
                format!("`{label}` is not a category of task `{}`", task.name),
                vec![label.to_string()],
            )],
        }
    }
}

/// Parses and checks a raw model response against `schema`.
pub fn validate_format(item_id: &str, raw: &str, schema: &OutputSchema) -> FormatOutcome {
    let bare_ok = schema.accept_bare_label && schema.tasks.len() == 1;
    let payload = match extract_answer(raw) {
        Ok(p) => p,
        Err(_) if bare_ok && !raw.trim().is_empty() => return bare_label(item_id, raw, schema),
        Err(why) => {
            return FormatOutcome::Invalid {
                findings: vec![finding(item_id, "unparseable", why, vec![excerpt(raw)])],
            }
        }
    };
    let obj = match serde_json::from_str::<Value>(payload) {
        Ok(Value::Object(map)) => map,
        Ok(Value::String(s)) if bare_ok => return bare_label(item_id, &s, schema),
        Err(_) if bare_ok && !payload.starts_with('{') => return bare_label(item_id, payload, schema),
        Ok(other) => {
            return FormatOutcome::Invalid {
                findings: vec![finding(
                    item_id,
                    "unparseable",
                    "answer is not a JSON object".into(),
                    vec![excerpt(&other.to_string())],
                )],
            }
        }
        Err(e) => {
            return FormatOutcome::Invalid {
                findings: vec![finding(item_id, "unparseable", format!("answer is not valid JSON: {e}"), vec![excerpt(payload)])],
            }
        }
    };

    let mut findings = Vec::new();
    let mut out = ParsedOutput::default();
    for task in &schema.tasks {
        match obj.get(&task.name) {
            None => findings.push(finding(
                item_id,
                "missing_key",
                format!("required key `{}` is missing", task.name),
                vec![task.name.clone()],
            )),
            Some(Value::String(v)) if task.has_category(v) => {
                out.labels.insert(task.name.clone(), v.clone());
            }
            Some(Value::String(v)) => findings.push(finding(
                item_id,
                "illegal_category",
                format!("`{v}` is not a category of task `{}`", task.name),
                vec![v.clone()],
            )),
            Some(other) => findings.push(finding(
                item_id,
                "wrong_type",
                format!("key `{}` must hold a category string", task.name),
                vec![other.to_string()],
            )),
        }
    }
    if schema.deny_unknown_keys {
        for key in obj.keys() {
            if schema.task_index(key).is_none() && !schema.is_reserved(key) {
                findings.push(finding(item_id, "unknown_key", format!("unexpected key `{key}`"), vec![key.clone()]));
            }
        }
    }
    if let Some(k) = &schema.rationale_key {
        match obj.get(k) {
            None | Some(Value::Null) => {}
            Some(Value::String(s)) => out.rationale = Some(s.clone()).filter(|s| !s.trim().is_empty()),
            Some(other) => findings.push(finding(
                item_id,
                "wrong_type",
                format!("key `{k}` must hold text"),
                vec![other.to_string()],
            )),
        }
    }
    if let Some(k) = &schema.evidence_key {
        match obj.get(k) {
            None | Some(Value::Null) => {}
            Some(Value::String(s)) => out.evidence.push(s.clone()),
            Some(Value::Array(xs)) if xs.iter().all(Value::is_string) => {
                out.evidence = xs.iter().filter_map(|x| x.as_str().map(str::to_string)).collect();
            }
            Some(other) => findings.push(finding(
                item_id,
                "wrong_type",
                format!("key `{k}` must hold text or a list of text"),
                vec![other.to_string()],
            )),
        }
    }
    if findings.is_empty() {
        FormatOutcome::Parsed(out)
    } else {
        FormatOutcome::Invalid { findings }
    }
}

impl OutputSchema {
    fn task_index(&self, key: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == key)
    }
}

fn excerpt(s: &str) -> String {
    const MAX: usize = 80;
    let t = s.trim();
    if t.is_empty() {
        return "(empty response)".into();
    }
    match t.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &t[..i]),
        None => t.to_string(),
    }
}
