use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{word_count, ModelResponse, ModelSpec, Transport, TransportError};
use crate::prompt::{RenderedPrompt, ANSWER_CLOSE, ANSWER_OPEN};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    /// Case-insensitive substring searched in the prompt's input section.
    pub contains: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTask {
    pub task: String,
    pub rules: Vec<KeywordRule>,
    pub default: String,
}

/// Deterministic offline provider behaviors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MockBehavior {
    /// Returns the prompt text verbatim.
    Echo,
    Fixed { text: String },
    /// Canned responses keyed by item id.
    Script {
        responses: BTreeMap<String, String>,
        #[serde(default)]
        fallback: Option<String>,
    },
    /// First matching rule per task wins; the rationale quotes the matching input line.
    Keyword { tasks: Vec<KeywordTask> },
}

impl MockBehavior {
    pub fn respond(&self, prompt: &RenderedPrompt) -> Option<String> {
        match self {
            MockBehavior::Echo => Some(prompt.text.clone()),
            MockBehavior::Fixed { text } => Some(text.clone()),
            MockBehavior::Script { responses, fallback } => {
                responses.get(&prompt.item_id).or(fallback.as_ref()).cloned()
            }
            MockBehavior::Keyword { tasks } => Some(keyword_answer(tasks, &prompt.text)),
        }
    }
}

/// The text between the last `Input:` header and the closing instruction line.
fn input_section(prompt: &str) -> &str {
    let start = prompt.rfind("Input:\n").map(|i| i + "Input:\n".len()).unwrap_or(0);
    let rest = &prompt[start..];
    let end = rest.trim_end().rfind('\n').unwrap_or(rest.len());
    &rest[..end]
}

fn keyword_answer(tasks: &[KeywordTask], prompt: &str) -> String {
    let input = input_section(prompt);
    let lower = input.to_lowercase();
    let mut answer = serde_json::Map::new();
    let mut quote: Option<&str> = None;
    for task in tasks {
        let hit = task
            .rules
            .iter()
            .find(|r| lower.contains(&r.contains.to_lowercase()));
        let category = hit.map(|r| r.category.as_str()).unwrap_or(&task.default);
        answer.insert(task.task.clone(), json!(category));
        if let (None, Some(rule)) = (quote, hit) {
            let needle = rule.contains.to_lowercase();
            quote = input
                .lines()
                .find(|l| l.to_lowercase().contains(&needle))
                .map(|l| l.split_once(": ").map(|(_, v)| v).unwrap_or(l).trim());
        }
    }
    if let Some(q) = quote {
        answer.insert("rationale".into(), json!(format!("\"{q}\"")));
    }
    format!(
        "{ANSWER_OPEN}{}{ANSWER_CLOSE}",
        serde_json::Value::Object(answer)
    )
}

pub struct MockTransport;

impl Transport for MockTransport {
    fn send(
        &self,
        model: &ModelSpec,
        prompt: &RenderedPrompt,
        _credential: Option<&str>,
    ) -> Result<ModelResponse, TransportError> {
        let behavior = model
            .mock
            .as_ref()
            .ok_or_else(|| TransportError::Decode(format!("mock model {} has no behavior", model.model_id)))?;
        let text = behavior.respond(prompt).ok_or_else(|| TransportError::Status {
            code: 404,
            body: format!("no scripted response for item {}", prompt.item_id),
            retry_after: None,
        })?;
        let finish_reason = if text.is_empty() { "empty" } else { "stop" };
        Ok(ModelResponse {
            input_tokens: word_count(&prompt.text),
            output_tokens: word_count(&text),
            text,
            latency_ms: 0,
            finish_reason: finish_reason.to_string(),
        })
    }
}
