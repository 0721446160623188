//! Shared domain types: data items, label schemas, annotations and provenance records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::digest::FramedHasher;
use crate::error::{Error, Result};

/// Where an item came from: a repository, optionally pinned to a commit and a file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceLocator {
    pub repo: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl SourceLocator {
    pub fn repo(repo: impl Into<String>) -> Self {
        Self {
            repo: repo.into(),
            commit: None,
            path: None,
        }
    }

    pub fn with_commit(mut self, commit: impl Into<String>) -> Self {
        self.commit = Some(commit.into());
        self
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }

    /// Forward slashes, no trailing slash, lowercase commit hash.
    pub fn normalized(&self) -> SourceLocator {
        fn norm_path(p: &str) -> String {
            let p = p.replace('\\', "/");
            let trimmed = p.trim_end_matches('/');
            if trimmed.is_empty() && !p.is_empty() {
                "/".to_string()
            } else {
                trimmed.to_string()
            }
        }
        SourceLocator {
            repo: norm_path(self.repo.trim()),
            commit: self.commit.as_ref().map(|c| c.trim().to_ascii_lowercase()),
            path: self.path.as_ref().map(|p| norm_path(p.trim())),
        }
    }

    /// Project name used to group exports: the last component of the repo path.
    pub fn project(&self) -> String {
        let norm = self.normalized();
        norm.repo
            .rsplit('/')
            .find(|s| !s.is_empty())
            .unwrap_or("project")
            .to_string()
    }
}

impl fmt::Display for SourceLocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.repo)?;
        if let Some(c) = &self.commit {
            write!(f, "@{c}")?;
        }
        if let Some(p) = &self.path {
            write!(f, ":{p}")?;
        }
        Ok(())
    }
}

/// Content digest of a source locator plus canonicalized fields.
///
/// Field names are sorted, values lose trailing whitespace, and every part is
/// length-framed before hashing.
pub fn compute_item_id(source: &SourceLocator, fields: &BTreeMap<String, String>) -> Result<String> {
    if fields.is_empty() {
        return Err(Error::invalid("data item must have at least one field"));
    }
    let src = source.normalized();
    let mut h = FramedHasher::new();
    h.part("item-v1")
        .part(&src.repo)
        .part(src.commit.as_deref().unwrap_or(""))
        .part(src.path.as_deref().unwrap_or(""))
        .part(fields.len().to_string());
    for (name, value) in fields {
        h.part(name).part(value.trim_end());
    }
    Ok(h.finish())
}

/// One unit to classify.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDataItem")]
pub struct DataItem {
    item_id: String,
    source: SourceLocator,
    fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawDataItem {
    item_id: Option<String>,
    source: SourceLocator,
    fields: BTreeMap<String, String>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl TryFrom<RawDataItem> for DataItem {
    type Error = Error;

    fn try_from(raw: RawDataItem) -> Result<Self> {
        let item = DataItem::new(raw.source, raw.fields, raw.metadata)?;
        if let Some(id) = raw.item_id {
            if id != item.item_id {
                return Err(Error::invalid(format!(
                    "stored item_id {id} does not match recomputed {}",
                    item.item_id
                )));
            }
        }
        Ok(item)
    }
}

impl DataItem {
    pub fn new(
        source: SourceLocator,
        fields: BTreeMap<String, String>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let item_id = compute_item_id(&source, &fields)?;
        Ok(Self {
            item_id,
            source,
            fields,
            metadata,
        })
    }

    pub fn id(&self) -> &str {
        &self.item_id
    }

    pub fn source(&self) -> &SourceLocator {
        &self.source
    }

    pub fn fields(&self) -> &BTreeMap<String, String> {
        &self.fields
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Metadata does not participate in identity, so it can be attached after construction.
    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub categories: Vec<String>,
}

impl Task {
    pub fn new(name: impl Into<String>, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.categories.iter().any(|c| c == category)
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }
}

/// Ordered classification tasks, each with its legal categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSchema")]
pub struct LabelSchema {
    tasks: Vec<Task>,
}

#[derive(Deserialize)]
struct RawLabelSchema {
    tasks: Vec<Task>,
}

impl TryFrom<RawLabelSchema> for LabelSchema {
    type Error = Error;

    fn try_from(raw: RawLabelSchema) -> Result<Self> {
        LabelSchema::new(raw.tasks)
    }
}

impl LabelSchema {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::invalid("label schema needs at least one task"));
        }
        let mut names = BTreeSet::new();
        for task in &tasks {
            if task.name.trim().is_empty() {
                return Err(Error::invalid("task name must not be empty"));
            }
            if !names.insert(task.name.as_str()) {
                return Err(Error::invalid(format!("duplicate task name `{}`", task.name)));
            }
            if task.categories.is_empty() {
                return Err(Error::invalid(format!("task `{}` has no categories", task.name)));
            }
            let mut seen = BTreeSet::new();
            for c in &task.categories {
                if !seen.insert(c.as_str()) {
                    return Err(Error::invalid(format!(
                        "duplicate category `{c}` in task `{}`",
                        task.name
                    )));
                }
            }
        }
        Ok(Self { tasks })
    }

    pub fn single(task: Task) -> Result<Self> {
        Self::new(vec![task])
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, name: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("label schema: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn check_label(&self, task: &str, category: &str) -> Result<()> {
        let t = self
            .task(task)
            .ok_or_else(|| Error::invalid(format!("unknown task `{task}`")))?;
        if !t.has_category(category) {
            return Err(Error::invalid(format!(
                "category `{category}` is not legal for task `{task}`"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Annotator {
    Human(String),
    Model(String),
}

impl fmt::Display for Annotator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Annotator::Human(id) => write!(f, "human:{id}"),
            Annotator::Model(id) => write!(f, "model:{id}"),
        }
    }
}

/// A single annotator's labels for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    item_id: String,
    annotator: Annotator,
    labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale: Option<String>,
    created_at: DateTime<Utc>,
}

impl Annotation {
    /// Rejects labels naming an unknown task or an illegal category.
    pub fn new(
        schema: &LabelSchema,
        item_id: impl Into<String>,
        annotator: Annotator,
        labels: BTreeMap<String, String>,
        rationale: Option<String>,
    ) -> Result<Self> {
        for (task, category) in &labels {
            schema.check_label(task, category)?;
        }
        Ok(Self {
            item_id: item_id.into(),
            annotator,
            labels,
            rationale,
            created_at: Utc::now(),
        })
    }

    /// Re-checks a deserialized annotation against the active schema.
    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        for (task, category) in &self.labels {
            schema.check_label(task, category)?;
        }
        Ok(())
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn annotator(&self) -> &Annotator {
        &self.annotator
    }

    pub fn labels(&self) -> &BTreeMap<String, String> {
        &self.labels
    }

    pub fn label(&self, task: &str) -> Option<&str> {
        self.labels.get(task).map(String::as_str)
    }

    pub fn rationale(&self) -> Option<&str> {
        self.rationale.as_deref()
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Audit trail entry for one model interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub run_id: String,
    pub model_id: String,
    pub prompt_version_id: String,
    pub item_id: String,
    pub request_digest: String,
    pub raw_response: String,
    pub token_usage: TokenUsage,
    pub latency_ms: u64,
    #[serde(default)]
    pub cached: bool,
    #[serde(default)]
    pub attempts: u32,
    pub created_at: DateTime<Utc>,
}

impl ProvenanceRecord {
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.run_id, &self.model_id, &self.item_id)
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("run_id", &self.run_id),
            ("model_id", &self.model_id),
            ("prompt_version_id", &self.prompt_version_id),
            ("item_id", &self.item_id),
            ("request_digest", &self.request_digest),
        ] {
            if v.trim().is_empty() {
                return Err(Error::invalid(format!("provenance record has empty {name}")));
            }
        }
        Ok(())
    }
}

/// One row of the enhanced dataset: an item plus the labels the applied model produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancedRecord {
    pub item_id: String,
    pub source: SourceLocator,
    pub fields: BTreeMap<String, String>,
    pub model_id: String,
    pub prompt_version_id: String,
    /// Empty when the response failed format validation.
    pub labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    /// SHA-256 of the raw response stored in the provenance ledger.
    pub response_ref: String,
}

impl EnhancedRecord {
    /// Flat view used by expectation rules: `item_id`, `locator`, `project`,
    /// `model_id`, `prompt_version_id`, `rationale`, `fields.<name>` and `labels.<task>`.
    pub fn flatten(&self, schema: &LabelSchema) -> BTreeMap<String, Option<String>> {
        let mut row = BTreeMap::new();
        row.insert("item_id".to_string(), Some(self.item_id.clone()));
        row.insert("locator".to_string(), Some(self.source.to_string()));
        row.insert("project".to_string(), Some(self.source.project()));
        row.insert("model_id".to_string(), Some(self.model_id.clone()));
        row.insert("prompt_version_id".to_string(), Some(self.prompt_version_id.clone()));
        row.insert("rationale".to_string(), self.rationale.clone());
        for (k, v) in &self.fields {
            row.insert(format!("fields.{k}"), Some(v.clone()));
        }
        for t in schema.tasks() {
            row.insert(format!("labels.{}", t.name), self.labels.get(&t.name).cloned());
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn empty_fields_rejected() {
        let err = compute_item_id(&SourceLocator::repo("r"), &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("at least one field"));
    }

    #[test]
    fn trailing_whitespace_ignored_but_leading_is_not() {
        let src = SourceLocator::repo("r");
        let a = compute_item_id(&src, &fields(&[("title", "fix bug")])).unwrap();
        let b = compute_item_id(&src, &fields(&[("title", "fix bug  \n")])).unwrap();
        let c = compute_item_id(&src, &fields(&[("title", " fix bug")])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn locator_normalization() {
        let a = SourceLocator::repo("repos\\proj/").with_commit("ABC");
        let b = SourceLocator::repo("repos/proj").with_commit("abc");
        let f = fields(&[("x", "1")]);
        assert_eq!(compute_item_id(&a, &f).unwrap(), compute_item_id(&b, &f).unwrap());
        assert_eq!(a.project(), "proj");
    }

    #[test]
    fn item_roundtrip_checks_id() {
        let item = DataItem::new(SourceLocator::repo("r"), fields(&[("a", "b")]), BTreeMap::new()).unwrap();
        let json = serde_json::to_string(&item).unwrap();
        let back: DataItem = serde_json::from_str(&json).unwrap();
        assert_eq!(back, item);
        let tampered = json.replace(item.id(), "deadbeef");
        assert!(serde_json::from_str::<DataItem>(&tampered).is_err());
    }

    #[test]
    fn schema_rules() {
        assert!(LabelSchema::new(vec![]).is_err());
        assert!(LabelSchema::new(vec![Task::new("t", &["a", "a"])]).is_err());
        assert!(LabelSchema::new(vec![Task::new("t", &["a"]), Task::new("t", &["b"])]).is_err());
        assert!(LabelSchema::new(vec![Task::new("t", &[])]).is_err());
        let s = LabelSchema::from_toml("[[tasks]]\nname = \"kind\"\ncategories = [\"a\", \"b\"]\n").unwrap();
        assert_eq!(s.tasks()[0].categories, vec!["a", "b"]);
    }

    #[test]
    fn annotation_constructor_rejects_unknown_labels() {
        let schema = LabelSchema::single(Task::new("kind", &["a", "b"])).unwrap();
        let ok = Annotation::new(&schema, "i1", Annotator::Human("h".into()), fields(&[("kind", "a")]), None);
        assert!(ok.is_ok());
        let bad_cat = Annotation::new(&schema, "i1", Annotator::Human("h".into()), fields(&[("kind", "z")]), None);
        assert!(bad_cat.is_err());
        let bad_task = Annotation::new(&schema, "i1", Annotator::Human("h".into()), fields(&[("other", "a")]), None);
        assert!(bad_task.is_err());
    }
}
