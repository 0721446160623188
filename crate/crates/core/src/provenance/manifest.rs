use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Config, ConfigSources};
use crate::digest::{digest_json, DIGEST_ALGORITHM};
use crate::error::Result;
use crate::jsonl;

/// Everything needed to replay a run. Holds no timestamps or filesystem paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub digest_algorithm: String,
    pub dataset_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhanced_dataset_digest: Option<String>,
    pub prompt_version_ids: Vec<String>,
    /// Resolved configuration: every parameter default, seeds and model specs.
    /// Model specs carry only the name of their credential variable.
    pub config: Config,
    pub config_sources: ConfigSources,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_digest: Option<String>,
    /// Artifact name -> digest (metrics, comparison, pilot rounds, findings).
    pub metrics_digests: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_model: Option<String>,
    /// Set when the run stopped before producing the enhanced dataset.
    pub partial: bool,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, dataset_digest: impl Into<String>, config: Config, sources: ConfigSources) -> Self {
        Self {
            run_id: run_id.into(),
            digest_algorithm: DIGEST_ALGORITHM.to_string(),
            dataset_digest: dataset_digest.into(),
            enhanced_dataset_digest: None,
            prompt_version_ids: Vec::new(),
            config,
            config_sources: sources,
            cache_digest: None,
            metrics_digests: BTreeMap::new(),
            best_model: None,
            partial: true,
        }
    }

    pub fn digest(&self) -> Result<String> {
        digest_json(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::io(format!("read {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes the manifest as pretty JSON and returns its digest.
pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<String> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    jsonl::write_atomic(path, text.as_bytes())?;
    manifest.digest()
}
