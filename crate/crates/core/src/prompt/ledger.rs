use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::lint::{lint_template, Severity};
use super::template::PromptTemplate;
use crate::digest::digest_json;
use crate::error::{Error, Result};
use crate::jsonl;

/// A registered, content-addressed prompt template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVersion {
    pub version_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<String>,
    #[serde(default)]
    pub changelog: String,
    /// Canonical form of the template this id was computed from.
    pub template: PromptTemplate,
    pub created_at: DateTime<Utc>,
}

impl PromptVersion {
    pub fn id_for(template: &PromptTemplate) -> Result<String> {
        digest_json(&template.canonical())
    }
}

/// Append-only store of prompt versions, optionally persisted as JSONL.
#[derive(Debug, Default)]
pub struct PromptLedger {
    path: Option<PathBuf>,
    versions: Vec<PromptVersion>,
    index: HashMap<String, usize>,
}

impl PromptLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let versions: Vec<PromptVersion> = if path.exists() {
            jsonl::read(&path)?
        } else {
            Vec::new()
        };
        let mut ledger = Self {
            path: Some(path),
            ..Self::default()
        };
        for v in versions {
            ledger.index.insert(v.version_id.clone(), ledger.versions.len());
            ledger.versions.push(v);
        }
        Ok(ledger)
    }

    pub fn versions(&self) -> &[PromptVersion] {
        &self.versions
    }

    pub fn get(&self, version_id: &str) -> Option<&PromptVersion> {
        self.index.get(version_id).map(|&i| &self.versions[i])
    }

    pub fn latest(&self) -> Option<&PromptVersion> {
        self.versions.last()
    }

    /// Registers a template. Identical canonical content returns the existing version.
    pub fn register(
        &mut self,
        template: &PromptTemplate,
        parent: Option<&str>,
        changelog: &str,
    ) -> Result<PromptVersion> {
        let errors: Vec<String> = lint_template(template)
            .into_iter()
            .filter(|f| f.severity == Severity::Error)
            .map(|f| f.message)
            .collect();
        if !errors.is_empty() {
            return Err(Error::Lint(errors.join("; ")));
        }
        let canonical = template.canonical();
        let version_id = digest_json(&canonical)?;
        if let Some(existing) = self.get(&version_id) {
            return Ok(existing.clone());
        }
        if let Some(p) = parent {
            if self.get(p).is_none() {
                return Err(Error::invalid(format!("unknown parent prompt version {p}")));
            }
        }
        let version = PromptVersion {
            version_id: version_id.clone(),
            parent_version: parent.map(str::to_string),
            changelog: changelog.to_string(),
            template: canonical,
            created_at: Utc::now(),
        };
        if let Some(path) = &self.path {
            jsonl::append(path, &version)?;
        }
        self.index.insert(version_id, self.versions.len());
        self.versions.push(version.clone());
        Ok(version)
    }
}

/// Free-function form of [`PromptLedger::register`].
pub fn register_version(
    ledger: &mut PromptLedger,
    template: &PromptTemplate,
    parent: Option<&str>,
    changelog: &str,
) -> Result<PromptVersion> {
    ledger.register(template, parent, changelog)
}
