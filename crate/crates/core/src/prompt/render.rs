use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use super::ledger::PromptVersion;
use super::template::PromptTemplate;
use super::{ANSWER_CLOSE, ANSWER_OPEN};
use crate::error::{Error, Result};
use crate::model::DataItem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub version_id: String,
    pub item_id: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([^{}]*?)\s*\}\}").expect("static regex"))
}

/// Placeholder names in order of first appearance.
pub fn placeholders(body: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for cap in placeholder_re().captures_iter(body) {
        let name = cap[1].to_string();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

fn schema_section(t: &PromptTemplate) -> String {
    let mut s = String::from("Categories:\n");
    for task in t.schema.tasks() {
        let _ = writeln!(s, "- {}: {}", task.name, task.categories.join(", "));
    }
    s.trim_end().to_string()
}

fn examples_section(t: &PromptTemplate) -> String {
    let mut s = String::from("Examples:");
    for (i, ex) in t.strategy.examples.iter().enumerate() {
        let _ = write!(
            s,
            "\n\n### Example {}\nInput:\n{}\nAnswer:\n{}",
            i + 1,
            ex.input,
            ex.output
        );
    }
    s
}

fn answer_instruction(t: &PromptTemplate) -> String {
    let tasks: Vec<&str> = t.schema.tasks().iter().map(|t| t.name.as_str()).collect();
    let shape = if t.strategy.structured_output {
        format!(
            "a single JSON object whose keys are the task names ({}) and whose values are exactly one listed category each; you may add a \"rationale\" key with a short justification that quotes the input",
            tasks.join(", ")
        )
    } else {
        "the category name only".to_string()
    };
    if t.strategy.chain_of_thought {
        format!(
            "Think step by step and write out your reasoning first. Then give the final answer as {shape}, placed between {ANSWER_OPEN} and {ANSWER_CLOSE}."
        )
    } else {
        format!("Give the final answer as {shape}, placed between {ANSWER_OPEN} and {ANSWER_CLOSE}.")
    }
}

/// Renders one item through a registered prompt version.
///
/// Pure: the same version and item always produce byte-identical text.
pub fn compose_prompt(version: &PromptVersion, item: &DataItem) -> Result<RenderedPrompt> {
    let t = &version.template;
    let has_builtin = |name: &str| placeholders(&t.body).iter().any(|p| p == name);
    let inline_schema = has_builtin("schema");
    let inline_examples = has_builtin("examples");

    let mut missing = None;
    let body = placeholder_re().replace_all(&t.body, |cap: &Captures| {
        let name = &cap[1];
        match name {
            "schema" => schema_section(t),
            "examples" if t.strategy.shots > 0 => examples_section(t),
            "examples" => String::new(),
            _ => match item.field(name) {
                Some(v) => v.to_string(),
                None => {
                    missing.get_or_insert_with(|| name.to_string());
                    String::new()
                }
            },
        }
    });
    if let Some(placeholder) = missing {
        return Err(Error::MissingField {
            placeholder,
            item_id: item.id().to_string(),
        });
    }

    let mut text = String::new();
    let _ = writeln!(text, "{}\n", t.task_description);
    if !t.context.is_empty() {
        let _ = writeln!(text, "Context:\n{}\n", t.context);
    }
    let _ = writeln!(text, "Output format:\n{}\n", t.output_format_spec);
    if !inline_schema {
        let _ = writeln!(text, "{}\n", schema_section(t));
    }
    if t.strategy.shots > 0 && !inline_examples {
        let _ = writeln!(text, "{}\n", examples_section(t));
    }
    let _ = writeln!(text, "Input:\n{}\n", body.trim_end());
    text.push_str(&answer_instruction(t));
    text.push('\n');

    Ok(RenderedPrompt {
        text,
        version_id: version.version_id.clone(),
        item_id: item.id().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::model::{LabelSchema, SourceLocator, Task};
    use crate::prompt::{PromptLedger, ShotExample, Strategy};

    fn template() -> PromptTemplate {
        PromptTemplate {
            name: "maint".into(),
            task_description: "Classify the commit.".into(),
            context: "ML projects.".into(),
            output_format_spec: "JSON object.".into(),
            schema: LabelSchema::single(Task::new("kind", &["corrective", "perfective", "adaptive"])).unwrap(),
            strategy: Strategy::default(),
            input_fields: vec!["title".into(), "edited_files".into()],
            body: "Title: {{title}}\nFiles: {{edited_files}}".into(),
        }
    }

    fn commit() -> DataItem {
        let mut f = BTreeMap::new();
        f.insert("title".to_string(), "Fix NaN loss in trainer".to_string());
        f.insert("edited_files".to_string(), "train.py".to_string());
        DataItem::new(SourceLocator::repo("proj").with_commit("abc"), f, BTreeMap::new()).unwrap()
    }

    fn version(t: PromptTemplate) -> PromptVersion {
        let mut ledger = PromptLedger::in_memory();
        ledger.register(&t, None, "init").unwrap()
    }

    #[test]
    fn zero_shot_has_title_and_no_examples() {
        let r = compose_prompt(&version(template()), &commit()).unwrap();
        assert!(r.text.contains("Fix NaN loss in trainer"));
        assert!(!r.text.contains("Examples:"));
        assert!(r.text.contains("- kind: corrective, perfective, adaptive"));
        assert!(placeholders(&r.text).is_empty());
        assert_eq!(r.item_id, commit().id());
    }

    #[test]
    fn few_shot_examples_in_author_order() {
        let mut t = template();
        t.strategy = Strategy {
            shots: 2,
            examples: vec![
                ShotExample { input: "first example".into(), output: "{\"kind\":\"corrective\"}".into() },
                ShotExample { input: "second example".into(), output: "{\"kind\":\"adaptive\"}".into() },
            ],
            ..Strategy::default()
        };
        let r = compose_prompt(&version(t), &commit()).unwrap();
        assert_eq!(r.text.matches("### Example ").count(), 2);
        let a = r.text.find("first example").unwrap();
        let b = r.text.find("second example").unwrap();
        assert!(a < b);
        assert!(r.text.find("### Example 1").unwrap() < r.text.find("### Example 2").unwrap());
    }

    #[test]
    fn deterministic() {
        let v = version(template());
        let a = compose_prompt(&v, &commit()).unwrap();
        let b = compose_prompt(&v, &commit()).unwrap();
        assert_eq!(a.text.as_bytes(), b.text.as_bytes());
    }

    #[test]
    fn missing_field_names_placeholder_and_item() {
        let mut t = template();
        t.input_fields.push("body".into());
        t.body.push_str("\n{{body}}");
        let err = compose_prompt(&version(t), &commit()).unwrap_err();
        match err {
            Error::MissingField { placeholder, item_id } => {
                assert_eq!(placeholder, "body");
                assert_eq!(item_id, commit().id());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn inline_builtins_and_cot() {
        let mut t = template();
        t.body = "{{schema}}\n---\n{{title}}".into();
        t.strategy.chain_of_thought = true;
        let r = compose_prompt(&version(t), &commit()).unwrap();
        assert_eq!(r.text.matches("Categories:").count(), 1);
        assert!(r.text.contains("step by step"));
        assert!(r.text.contains(ANSWER_OPEN));
    }

    #[test]
    fn field_values_are_not_reexpanded() {
        let mut f = BTreeMap::new();
        f.insert("title".to_string(), "template {{edited_files}}".to_string());
        f.insert("edited_files".to_string(), "x.py".to_string());
        let item = DataItem::new(SourceLocator::repo("p"), f, BTreeMap::new()).unwrap();
        let r = compose_prompt(&version(template()), &item).unwrap();
        assert!(r.text.contains("template {{edited_files}}"));
    }
}
