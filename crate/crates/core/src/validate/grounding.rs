//! Lexical grounding: every content term cited by a model must occur in the
//! item it was given. This is a lower bound on hallucinations, not a semantic check.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::format::ParsedOutput;
use super::{FindingKind, Severity, ValidationFinding};
use crate::model::{DataItem, LabelSchema};

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as",
    "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could",
    "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has",
    "have", "having", "he", "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "itself", "just", "like", "may", "me", "might", "more", "most", "must", "my", "no", "nor", "not",
    "now", "of", "off", "on", "once", "only", "or", "other", "our", "out", "over", "own", "same", "she",
    "should", "since", "so", "some", "such", "than", "that", "the", "their", "them", "then", "there", "these",
    "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingConfig {
    /// Extra terms that never need grounding (lowercase compared).
    #[serde(default)]
    pub allowed_vocabulary: BTreeSet<String>,
    #[serde(default = "default_stopwords")]
    pub stopwords: BTreeSet<String>,
}

fn default_stopwords() -> BTreeSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            allowed_vocabulary: BTreeSet::new(),
            stopwords: default_stopwords(),
        }
    }
}

impl GroundingConfig {
    pub fn with_vocabulary<I: IntoIterator<Item = S>, S: Into<String>>(mut self, words: I) -> Self {
        self.allowed_vocabulary
            .extend(words.into_iter().map(|w| w.into().to_lowercase()));
        self
    }
}

fn is_path_like(token: &str) -> bool {
    let inner = token.trim_matches(|c: char| !c.is_alphanumeric());
    inner.contains(['/', '\\', '_']) || inner.chars().skip(1).any(|c| c == '.')
}

/// Lowercased terms of `text`: path-like tokens (`src/app.py`, `snake_case`)
/// stay whole, everything else splits on non-alphanumerics. Single characters
/// are dropped.
pub fn content_terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for token in text.split_whitespace() {
        let trimmed = token.trim_matches(|c: char| !(c.is_alphanumeric() || c == '_' || c == '/' || c == '\\'));
        if trimmed.is_empty() {
            continue;
        }
        if is_path_like(trimmed) {
            out.push(trimmed.to_lowercase());
        } else {
            out.extend(
                trimmed
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|p| p.chars().count() > 1)
                    .map(str::to_lowercase),
            );
        }
    }
    out
}

/// One warning per distinct rationale or evidence term absent from the item's
/// field names and values. Stopwords, schema task and category names and the
/// allowed vocabulary are exempt.
pub fn flag_hallucinations(
    output: &ParsedOutput,
    item: &DataItem,
    schema: &LabelSchema,
    config: &GroundingConfig,
) -> Vec<ValidationFinding> {
    let mut exempt: BTreeSet<String> = config.stopwords.clone();
    exempt.extend(config.allowed_vocabulary.iter().map(|w| w.to_lowercase()));
    for t in schema.tasks() {
        exempt.extend(content_terms(&t.name));
        exempt.insert(t.name.to_lowercase());
        for c in &t.categories {
            exempt.insert(c.to_lowercase());
            exempt.extend(content_terms(c));
        }
    }
    exempt.extend(output.labels.values().map(|v| v.to_lowercase()));

    let mut haystack = String::new();
    for (k, v) in item.fields() {
        haystack.push_str(&k.to_lowercase());
        haystack.push('\n');
        haystack.push_str(&v.to_lowercase());
        haystack.push('\n');
    }

    let mut cited = String::new();
    if let Some(r) = &output.rationale {
        cited.push_str(r);
    }
    for e in &output.evidence {
        cited.push('\n');
        cited.push_str(e);
    }

    let mut seen = BTreeSet::new();
    let mut findings = Vec::new();
    for term in content_terms(&cited) {
        if exempt.contains(&term) || haystack.contains(&term) || !seen.insert(term.clone()) {
            continue;
        }
        findings.push(ValidationFinding::new(
            item.id(),
            FindingKind::Hallucination,
            Severity::Warning,
            "ungrounded_term",
            format!("`{term}` does not occur in the source item"),
            vec![term],
        ));
    }
    findings
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::model::{SourceLocator, Task};

    fn item() -> DataItem {
        let mut f = BTreeMap::new();
        f.insert("title".to_string(), "Refactor data loader for speed".to_string());
        f.insert("edited_files".to_string(), "src/loader.py\nREADME.md".to_string());
        DataItem::new(SourceLocator::repo("r").with_commit("abc"), f, BTreeMap::new()).unwrap()
    }

    fn schema() -> LabelSchema {
        LabelSchema::single(Task::new("maintenance", &["corrective", "adaptive", "perfective"])).unwrap()
    }

    fn parsed(rationale: &str) -> ParsedOutput {
        ParsedOutput {
            labels: BTreeMap::from([("maintenance".to_string(), "perfective".to_string())]),
            rationale: Some(rationale.to_string()),
            evidence: Vec::new(),
        }
    }

    #[test]
    fn quoted_title_is_grounded() {
        let f = flag_hallucinations(&parsed("\"Refactor data loader for speed\" is perfective"), &item(), &schema(), &GroundingConfig::default());
        assert!(f.is_empty(), "{f:?}");
    }

    #[test]
    fn absent_file_is_flagged() {
        let f = flag_hallucinations(&parsed("It edits train.py and src/loader.py."), &item(), &schema(), &GroundingConfig::default());
        let terms: Vec<_> = f.iter().map(|x| x.evidence[0].as_str()).collect();
        assert_eq!(terms, vec!["edits", "train.py"]);
        let allowed = GroundingConfig::default().with_vocabulary(["edits"]);
        assert_eq!(flag_hallucinations(&parsed("It edits train.py"), &item(), &schema(), &allowed).len(), 1);
    }

    #[test]
    fn empty_rationale_has_no_findings() {
        let mut p = parsed("");
        assert!(flag_hallucinations(&p, &item(), &schema(), &GroundingConfig::default()).is_empty());
        p.rationale = None;
        assert!(flag_hallucinations(&p, &item(), &schema(), &GroundingConfig::default()).is_empty());
    }

    #[test]
    fn terms_keep_paths_whole() {
        assert_eq!(content_terms("see (src/app.py), x y-z"), vec!["see", "src/app.py"]);
        assert_eq!(content_terms("snake_case camel-Case"), vec!["snake_case", "camel", "case"]);
    }
}
