//! Provider abstraction: model specs, transports, response cache, retry and cost.

mod cache;
mod client;
mod cost;
mod mock;
mod retry;
mod transport;

pub use cache::{cache_key, ResponseCache};
pub use client::LlmClient;
pub use cost::{call_cost, display_cost, total_cost};
pub use mock::{KeywordRule, KeywordTask, MockBehavior, MockTransport};
pub use retry::{NoSleep, RetryPolicy, Sleeper, ThreadSleeper};
pub use transport::{HttpTransport, Transport, TransportError};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    OpenaiCompatibleHttp,
    AnthropicCompatibleHttp,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_concurrency() -> usize {
    4
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub provider: ProviderKind,
    /// Full request URL; provider default when empty.
    #[serde(default)]
    pub endpoint: String,
    /// Name sent to the provider; defaults to `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_model: Option<String>,
    /// Environment variable holding the API key. Only the name is ever stored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    pub price_in_per_million: Decimal,
    pub price_out_per_million: Decimal,
    #[serde(default)]
    pub params: ModelParams,
    /// Advertised context window in tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_limit: Option<u64>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockBehavior>,
}

impl ModelSpec {
    pub fn mock(model_id: impl Into<String>, behavior: MockBehavior) -> Self {
        Self {
            model_id: model_id.into(),
            provider: ProviderKind::Mock,
            endpoint: String::new(),
            api_model: None,
            credential_env: None,
            price_in_per_million: Decimal::ZERO,
            price_out_per_million: Decimal::ZERO,
            params: ModelParams::default(),
            context_limit: None,
            max_concurrency: default_concurrency(),
            mock: Some(behavior),
        }
    }

    pub fn with_prices(mut self, input: Decimal, output: Decimal) -> Self {
        self.price_in_per_million = input;
        self.price_out_per_million = output;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.trim().is_empty() {
            return Err(Error::invalid("model_id must not be empty"));
        }
        if self.price_in_per_million.is_sign_negative() || self.price_out_per_million.is_sign_negative() {
            return Err(Error::invalid(format!("model {}: prices must be >= 0", self.model_id)));
        }
        let t = self.params.temperature;
        if !(0.0..=2.0).contains(&t) {
            return Err(Error::invalid(format!(
                "model {}: temperature {t} outside [0, 2]",
                self.model_id
            )));
        }
        if self.max_concurrency == 0 {
            return Err(Error::invalid(format!("model {}: max_concurrency must be >= 1", self.model_id)));
        }
        Ok(())
    }

    pub fn api_model(&self) -> &str {
        self.api_model.as_deref().unwrap_or(&self.model_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub finish_reason: String,
}

impl ModelResponse {
    pub fn is_normal_finish(&self) -> bool {
        matches!(self.finish_reason.as_str(), "stop" | "end_turn" | "stop_sequence")
    }
}

/// Whitespace-separated word count, the mock provider's token unit.
pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
