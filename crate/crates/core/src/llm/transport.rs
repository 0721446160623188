use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ModelResponse, ModelSpec, ProviderKind};
use crate::prompt::RenderedPrompt;

pub const OPENAI_DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const ANTHROPIC_DEFAULT_ENDPOINT: &str = "https://api.anthropic.com/v1/messages";
const ANTHROPIC_VERSION: &str = "2023-06-01";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Status {
        code: u16,
        body: String,
        retry_after: Option<Duration>,
    },
    Network(String),
    Decode(String),
}

impl TransportError {
    pub fn is_auth(&self) -> bool {
        matches!(self, TransportError::Status { code: 401 | 403, .. })
    }

    /// Rate limits, timeouts, server errors and dropped connections.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => matches!(code, 408 | 409 | 425 | 429 | 500..=599),
            TransportError::Network(_) => true,
            TransportError::Decode(_) => false,
        }
    }

    pub fn is_rate_limit(&self) -> bool {
        matches!(self, TransportError::Status { code: 429, .. })
    }

    pub fn status_text(&self) -> String {
        match self {
            TransportError::Status { code, body, .. } => format!("HTTP {code}: {}", truncate(body, 200)),
            TransportError::Network(m) => format!("network: {m}"),
            TransportError::Decode(m) => format!("decode: {m}"),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// One request/response exchange with a provider. Retries live in the client.
pub trait Transport: Send + Sync {
    fn send(
        &self,
        model: &ModelSpec,
        prompt: &RenderedPrompt,
        credential: Option<&str>,
    ) -> Result<ModelResponse, TransportError>;
}

/// Chat-completion request body for the provider family.
pub fn request_body(model: &ModelSpec, prompt: &str) -> Value {
    let messages = json!([{ "role": "user", "content": prompt }]);
    match model.provider {
        ProviderKind::AnthropicCompatibleHttp => json!({
            "model": model.api_model(),
            "max_tokens": model.params.max_output_tokens,
            "temperature": model.params.temperature,
            "messages": messages,
        }),
        _ => {
            let mut body = json!({
                "model": model.api_model(),
                "messages": messages,
                "temperature": model.params.temperature,
                "max_tokens": model.params.max_output_tokens,
            });
            if let Some(seed) = model.params.seed {
                body["seed"] = json!(seed);
            }
            body
        }
    }
}

/// Pulls text, usage and finish reason out of a provider response body.
pub fn parse_response_body(kind: ProviderKind, body: &Value) -> Result<ModelResponse, String> {
    let u64_at = |v: &Value, ptr: &str| v.pointer(ptr).and_then(Value::as_u64);
    match kind {
        ProviderKind::AnthropicCompatibleHttp => {
            let blocks = body
                .get("content")
                .and_then(Value::as_array)
                .ok_or("missing `content` array")?;
            let text: String = blocks
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect();
            Ok(ModelResponse {
                text,
                input_tokens: u64_at(body, "/usage/input_tokens").ok_or("missing usage.input_tokens")?,
                output_tokens: u64_at(body, "/usage/output_tokens").ok_or("missing usage.output_tokens")?,
                latency_ms: 0,
                finish_reason: body
                    .get("stop_reason")
                    .and_then(Value::as_str)
                    .unwrap_or("unknown")
                    .to_string(),
            })
        }
        _ => {
            let choice = body.pointer("/choices/0").ok_or("missing `choices[0]`")?;
            Ok(ModelResponse {
                text: choice
                    .pointer("/message/content")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
                input_tokens: u64_at(body, "/usage/prompt_tokens").ok_or("missing usage.prompt_tokens")?,
                output_tokens: u64_at(body, "/usage/completion_tokens")
                    .ok_or("missing usage.completion_tokens")?,
                latency_ms: 0,
                finish_reason: choice
                    .get("finish_reason")
                    .and_then(Value::as_str)
                    .unwrap_or("unknown")
                    .to_string(),
            })
        }
    }
}

/// Blocking HTTP transport for the OpenAI- and Anthropic-compatible wire formats.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for HttpTransport {
    fn send(
        &self,
        model: &ModelSpec,
        prompt: &RenderedPrompt,
        credential: Option<&str>,
    ) -> Result<ModelResponse, TransportError> {
        let (default_url, kind) = match model.provider {
            ProviderKind::OpenaiCompatibleHttp => (OPENAI_DEFAULT_ENDPOINT, model.provider),
            ProviderKind::AnthropicCompatibleHttp => (ANTHROPIC_DEFAULT_ENDPOINT, model.provider),
            ProviderKind::Mock => {
                return Err(TransportError::Decode("mock models do not use HTTP".into()))
            }
        };
        let url = if model.endpoint.is_empty() { default_url } else { &model.endpoint };
        let body = request_body(model, &prompt.text);
        let mut req = self.agent.post(url).header("content-type", "application/json");
        if let Some(key) = credential {
            req = match kind {
                ProviderKind::AnthropicCompatibleHttp => req
                    .header("x-api-key", key)
                    .header("anthropic-version", ANTHROPIC_VERSION),
                _ => req.header("authorization", &format!("Bearer {key}")),
            };
        }
        let started = Instant::now();
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status {
                code: status,
                body: text,
                retry_after,
            });
        }
        let json: Value = serde_json::from_str(&text).map_err(|e| TransportError::Decode(e.to_string()))?;
        let mut parsed = parse_response_body(kind, &json).map_err(TransportError::Decode)?;
        parsed.latency_ms = latency_ms;
        Ok(parsed)
    }
}
