//! Run configuration: one TOML file plus flag overrides, with precedence
//! flags > file > defaults. Every value here is recorded in the run manifest.
//!
//! ```toml
//! seed = 7
//!
//! [pilot]
//! sample_size = 30
//! model = "gpt-4o"
//! gate = { threshold = 0.9, min_n = 30 }
//!
//! [bench]
//! negative_label = "none"
//!
//! [validate]
//! dedup = { shingle_w = 3, threshold = 0.8 }
//! grounding_vocabulary = ["refactor"]
//!
//! [[llm.models]]
//! model_id = "gpt-4o"
//! provider = "openai-compatible-http"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! credential_env = "OPENAI_API_KEY"
//! price_in_per_million = "2.50"
//! price_out_per_million = "10.00"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::Weights;
use crate::error::{Error, Result};
use crate::llm::{ModelSpec, RetryPolicy};
use crate::pilot::GateConfig;
use crate::validate::DedupConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    pub sample_size: usize,
    /// Metadata key to stratify the pilot sample by.
    pub stratify_by: Option<String>,
    /// Model used for pilot annotation; the first configured model when unset.
    pub model: Option<String>,
    pub gate: GateConfig,
    /// Re-label the previous round's items instead of drawing a fresh sample.
    pub reuse_sample: bool,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            sample_size: 30,
            stratify_by: None,
            model: None,
            gate: GateConfig::default(),
            reuse_sample: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub confidence: f64,
    pub margin: f64,
    pub proportion: f64,
    /// Gold label given to negative distractors; required when distractors are used.
    pub negative_label: Option<String>,
    pub weights: Option<Weights>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            confidence: 0.95,
            margin: 0.05,
            proportion: 0.5,
            negative_label: None,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub dedup: DedupConfig,
    pub grounding_vocabulary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub retry: RetryPolicy,
    pub models: Vec<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub pilot: PilotConfig,
    pub bench: BenchConfig,
    pub validate: ValidateConfig,
    pub llm: LlmConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::io(format!("read {}", path.display()), e),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.pilot.gate.validate()?;
        self.validate.dedup.validate()?;
        if self.pilot.sample_size == 0 {
            return Err(Error::Config("pilot.sample_size must be at least 1".into()));
        }
        if self.llm.retry.max_attempts == 0 {
            return Err(Error::Config("llm.retry.max_attempts must be at least 1".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for m in &self.llm.models {
            m.validate()?;
            if !ids.insert(m.model_id.as_str()) {
                return Err(Error::Config(format!("model `{}` is configured twice", m.model_id)));
            }
        }
        if let Some(p) = &self.pilot.model {
            if !ids.is_empty() && !ids.contains(p.as_str()) {
                return Err(Error::Config(format!("pilot.model `{p}` is not a configured model")));
            }
        }
        Ok(())
    }

    pub fn model(&self, id: &str) -> Option<&ModelSpec> {
        self.llm.models.iter().find(|m| m.model_id == id)
    }

    pub fn pilot_model(&self) -> Result<&ModelSpec> {
        match &self.pilot.model {
            Some(id) => self
                .model(id)
                .ok_or_else(|| Error::Config(format!("pilot.model `{id}` is not configured"))),
            None => self
                .llm
                .models
                .first()
                .ok_or_else(|| Error::Config("no models configured under [[llm.models]]".into())),
        }
    }
}

/// Where each setting came from, in application order, for the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfigSources(pub Vec<String>);

impl ConfigSources {
    pub fn defaults() -> Self {
        Self(vec!["defaults".into()])
    }

    pub fn push(&mut self, source: impl Into<String>) {
        self.0.push(source.into());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_toml("seed = 3\n[pilot]\ngate = { threshold = 0.8 }\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.pilot.gate.threshold, 0.8);
        assert_eq!(c.pilot.gate.min_n, 30);
        assert!(c.pilot.gate.inclusive);
        assert_eq!(c.validate.dedup, DedupConfig::default());
        assert_eq!(c.llm.retry, RetryPolicy::default());
    }

    #[test]
    fn models_parse_and_validate() {
        let c = Config::from_toml(
            r#"
            [[llm.models]]
            model_id = "m1"
            provider = "mock"
            price_in_per_million = "0.25"
            price_out_per_million = "1.25"
            mock = { rule = "fixed", text = "<answer>{}</answer>" }
            "#,
        )
        .unwrap();
        assert_eq!(c.pilot_model().unwrap().model_id, "m1");
        assert_eq!(c.llm.models[0].price_out_per_million.to_string(), "1.25");
        assert!(Config::from_toml("[pilot]\ngate = { threshold = 1.5 }\n").is_err());
        assert!(Config::from_toml("bogus = 1\n").is_err());
    }
}
