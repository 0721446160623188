use std::fmt;

use serde::{Deserialize, Serialize};

use super::render::placeholders;
use super::template::PromptTemplate;
use super::BUILTIN_PLACEHOLDERS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "code", content = "subject")]
pub enum LintCode {
    MissingTaskDescription,
    MissingContext,
    MissingOutputFormat,
    ExampleCountMismatch,
    UnresolvedPlaceholder(String),
    BareLabelMultiTask,
    ChainOfThoughtBareLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub severity: Severity,
    pub code: LintCode,
    pub message: String,
}

impl LintFinding {
    fn error(code: LintCode, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            code,
            message: message.into(),
        }
    }

    fn warning(code: LintCode, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for LintFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}", self.message)
    }
}

/// Checks the three prompt parts (task description, context, output format)
/// and strategy consistency. Never fails; an empty list means a clean template.
pub fn lint_template(template: &PromptTemplate) -> Vec<LintFinding> {
    let mut out = Vec::new();
    if template.task_description.trim().is_empty() {
        out.push(LintFinding::error(
            LintCode::MissingTaskDescription,
            "missing task description",
        ));
    }
    if template.context.trim().is_empty() {
        out.push(LintFinding::warning(
            LintCode::MissingContext,
            "missing contextual information",
        ));
    }
    if template.output_format_spec.trim().is_empty() {
        out.push(LintFinding::error(
            LintCode::MissingOutputFormat,
            "missing output format specification",
        ));
    }
    let strategy = &template.strategy;
    if strategy.examples.len() != strategy.shots {
        out.push(LintFinding::error(
            LintCode::ExampleCountMismatch,
            format!(
                "example count mismatch: shots = {} but {} example(s) attached",
                strategy.shots,
                strategy.examples.len()
            ),
        ));
    }
    for name in placeholders(&template.body) {
        let known = BUILTIN_PLACEHOLDERS.contains(&name.as_str())
            || template.input_fields.contains(&name);
        if !known {
            out.push(LintFinding::error(
                LintCode::UnresolvedPlaceholder(name.clone()),
                format!("unresolved placeholder `{{{{{name}}}}}`: `{name}` is not a bound item field"),
            ));
        }
    }
    if !strategy.structured_output {
        if template.schema.tasks().len() > 1 {
            out.push(LintFinding::error(
                LintCode::BareLabelMultiTask,
                "bare-label output can only answer a single task; enable structured output",
            ));
        }
        if strategy.chain_of_thought {
            out.push(LintFinding::warning(
                LintCode::ChainOfThoughtBareLabel,
                "chain-of-thought requested while the output format demands a bare label",
            ));
        }
    }
    out
}
