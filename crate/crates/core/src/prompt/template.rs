use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabelSchema;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotExample {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    /// 0 = zero-shot, 1 = one-shot, k = few-shot.
    pub shots: usize,
    #[serde(default)]
    pub examples: Vec<ShotExample>,
    #[serde(default)]
    pub chain_of_thought: bool,
    #[serde(default = "yes")]
    pub structured_output: bool,
}

fn yes() -> bool {
    true
}

impl Default for Strategy {
    fn default() -> Self {
        Self {
            shots: 0,
            examples: Vec::new(),
            chain_of_thought: false,
            structured_output: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub task_description: String,
    pub context: String,
    pub output_format_spec: String,
    pub schema: LabelSchema,
    pub strategy: Strategy,
    /// Item fields the body is allowed to reference.
    pub input_fields: Vec<String>,
    pub body: String,
}

#[derive(Deserialize)]
struct FrontMatter {
    name: String,
    schema: String,
    #[serde(default)]
    input_fields: Vec<String>,
    #[serde(default)]
    shots: usize,
    #[serde(default)]
    chain_of_thought: bool,
    #[serde(default = "yes")]
    structured_output: bool,
    #[serde(default)]
    examples: Vec<ShotExample>,
}

impl PromptTemplate {
    /// Parses a template file.
    ///
    /// ```text
    /// ---
    /// name = "maintenance"
    /// schema = "schema.toml"
    /// input_fields = ["title", "edited_files"]
    /// shots = 0
    /// ---
    /// ## task
    /// Classify the commit.
    /// ## context
    /// ...
    /// ## output format
    /// ...
    /// ## input
    /// Title: {{title}}
    /// ```
    ///
    /// The schema path is resolved relative to `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let text = text.replace("\r\n", "\n");
        let rest = text
            .strip_prefix("---\n")
            .ok_or_else(|| Error::Config("template must start with a `---` front-matter line".into()))?;
        let end = rest
            .find("\n---\n")
            .ok_or_else(|| Error::Config("unterminated template front matter".into()))?;
        let front: FrontMatter = toml::from_str(&rest[..end])
            .map_err(|e| Error::Config(format!("template front matter: {e}")))?;
        let sections = split_sections(&rest[end + 5..])?;
        let get = |name: &str| {
            sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, body)| body.clone())
                .unwrap_or_default()
        };
        let schema = LabelSchema::load(&base_dir.join(&front.schema))?;
        Ok(Self {
            name: front.name,
            task_description: get("task"),
            context: get("context"),
            output_format_spec: get("output format"),
            schema,
            strategy: Strategy {
                shots: front.shots,
                examples: front.examples,
                chain_of_thought: front.chain_of_thought,
                structured_output: front.structured_output,
            },
            input_fields: front.input_fields,
            body: get("input"),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Line endings to `\n`, trailing whitespace stripped per line and at the end.
    pub fn canonical(&self) -> PromptTemplate {
        let mut t = self.clone();
        for s in [
            &mut t.task_description,
            &mut t.context,
            &mut t.output_format_spec,
            &mut t.body,
        ] {
            *s = canonical_text(s);
        }
        for ex in &mut t.strategy.examples {
            ex.input = canonical_text(&ex.input);
            ex.output = canonical_text(&ex.output);
        }
        t.name = t.name.trim().to_string();
        t
    }
}

pub(crate) fn canonical_text(s: &str) -> String {
    let s = s.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<&str> = s.lines().map(str::trim_end).collect();
    lines.join("\n").trim_end().to_string()
}

const SECTIONS: [&str; 4] = ["task", "context", "output format", "input"];

fn split_sections(body: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in body.lines() {
        if let Some(h) = line.strip_prefix("## ") {
            let name = h.trim().to_ascii_lowercase();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown template section `{name}`")));
            }
            if let Some((n, lines)) = current.take() {
                out.push((n, lines.join("\n").trim().to_string()));
            }
            current = Some((name, Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        } else if !line.trim().is_empty() {
            return Err(Error::Config("template text before the first `## ` section".into()));
        }
    }
    if let Some((n, lines)) = current {
        out.push((n, lines.join("\n").trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_format() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("schema.toml"),
            "[[tasks]]\nname = \"kind\"\ncategories = [\"fix\", \"feature\"]\n",
        )
        .unwrap();
        let text = "---\nname = \"t\"\nschema = \"schema.toml\"\ninput_fields = [\"title\"]\nshots = 1\n\n[[examples]]\ninput = \"fix typo\"\noutput = '{\"kind\": \"fix\"}'\n---\n## task\nClassify it.\n\n## context\nML repos.\n## output format\nJSON.\n## input\nTitle: {{title}}\n";
        let t = PromptTemplate::parse(text, dir.path()).unwrap();
        assert_eq!(t.task_description, "Classify it.");
        assert_eq!(t.context, "ML repos.");
        assert_eq!(t.body, "Title: {{title}}");
        assert_eq!(t.strategy.shots, 1);
        assert_eq!(t.strategy.examples.len(), 1);
        assert!(t.strategy.structured_output);
        assert_eq!(t.schema.tasks()[0].name, "kind");
    }

    #[test]
    fn rejects_unknown_section() {
        let err = split_sections("## nope\nx").unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn canonical_text_rules() {
        assert_eq!(canonical_text("a  \r\nb\t\n\n\n"), "a\nb");
        assert_ne!(canonical_text(" a"), canonical_text("a"));
    }
}
