use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::Utc;
use log::{info, warn};
use serde::Serialize;

use super::cache::{cache_key, ResponseCache};
use super::mock::MockTransport;
use super::retry::{Jitter, RetryPolicy, Sleeper, ThreadSleeper};
use super::transport::{HttpTransport, Transport};
use super::{word_count, ModelParams, ModelResponse, ModelSpec, ProviderKind};
use crate::digest::digest_json;
use crate::error::{Error, Result};
use crate::model::{ProvenanceRecord, TokenUsage};
use crate::prompt::RenderedPrompt;
use crate::provenance::ProvenanceLedger;

type CredentialLookup = dyn Fn(&str) -> Option<String> + Send + Sync;

#[derive(Serialize)]
struct RequestMaterial<'a> {
    model_id: &'a str,
    params: &'a ModelParams,
    prompt_version_id: &'a str,
    item_id: &'a str,
    prompt: &'a str,
}

/// Digest that ties a provenance record to its exact request.
pub fn request_digest(model: &ModelSpec, prompt: &RenderedPrompt) -> Result<String> {
    digest_json(&RequestMaterial {
        model_id: &model.model_id,
        params: &model.params,
        prompt_version_id: &prompt.version_id,
        item_id: &prompt.item_id,
        prompt: &prompt.text,
    })
}

/// Uniform entry point for every model call.
///
/// Each returned response has been written to the provenance ledger (when one
/// is attached) under the client's current run id.
pub struct LlmClient {
    run_id: String,
    http: Arc<dyn Transport>,
    overrides: HashMap<String, Arc<dyn Transport>>,
    cache: Option<ResponseCache>,
    ledger: Option<Arc<ProvenanceLedger>>,
    retry: RetryPolicy,
    jitter: Jitter,
    sleeper: Arc<dyn Sleeper>,
    credentials: Arc<CredentialLookup>,
    network_calls: AtomicU64,
    // per provider: no request before this instant
    backoff: Mutex<HashMap<(ProviderKind, String), Instant>>,
}

impl LlmClient {
    pub fn new(run_id: impl Into<String>) -> Self {
        let retry = RetryPolicy::default();
        Self {
            run_id: run_id.into(),
            http: Arc::new(HttpTransport::default()),
            overrides: HashMap::new(),
            cache: None,
            ledger: None,
            jitter: Jitter::new(retry.jitter_seed),
            retry,
            sleeper: Arc::new(ThreadSleeper),
            credentials: Arc::new(|name: &str| std::env::var(name).ok()),
            network_calls: AtomicU64::new(0),
            backoff: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_ledger(mut self, ledger: Arc<ProvenanceLedger>) -> Self {
        self.ledger = Some(ledger);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.jitter = Jitter::new(retry.jitter_seed);
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_http_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.http = transport;
        self
    }

    /// Routes one model id to a specific transport (fakes, recorders).
    pub fn with_transport_for(mut self, model_id: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        self.overrides.insert(model_id.into(), transport);
        self
    }

    pub fn with_credentials(mut self, lookup: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.credentials = Arc::new(lookup);
        self
    }

    pub fn set_run_id(&mut self, run_id: impl Into<String>) {
        self.run_id = run_id.into();
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn ledger(&self) -> Option<&Arc<ProvenanceLedger>> {
        self.ledger.as_ref()
    }

    /// Transport attempts made so far, including failed ones.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn transport(&self, model: &ModelSpec) -> Arc<dyn Transport> {
        if let Some(t) = self.overrides.get(&model.model_id) {
            return t.clone();
        }
        match model.provider {
            ProviderKind::Mock => Arc::new(MockTransport),
            _ => self.http.clone(),
        }
    }

    fn credential(&self, model: &ModelSpec) -> Result<Option<String>> {
        if model.provider == ProviderKind::Mock {
            return Ok(None);
        }
        let name = model.credential_env.as_deref().ok_or_else(|| Error::Auth {
            model_id: model.model_id.clone(),
            detail: "no credential environment variable configured".into(),
        })?;
        match (self.credentials)(name) {
            Some(v) if !v.trim().is_empty() => Ok(Some(v)),
            _ => Err(Error::Auth {
                model_id: model.model_id.clone(),
                detail: format!("environment variable {name} is unset or empty"),
            }),
        }
    }

    fn estimate_tokens(model: &ModelSpec, text: &str) -> u64 {
        match model.provider {
            ProviderKind::Mock => word_count(text),
            // ~4 bytes per token is the usual rough figure for English text
            _ => (text.len() as u64).div_ceil(4),
        }
    }

    fn wait_for_provider(&self, key: &(ProviderKind, String)) {
        let until = self.backoff.lock().expect("backoff lock").get(key).copied();
        if let Some(until) = until {
            let now = Instant::now();
            if until > now {
                self.sleeper.sleep(until - now);
            }
        }
    }

    /// Pre-flight checks plus the retry loop. Does not touch cache or ledger.
    fn call(&self, model: &ModelSpec, prompt: &RenderedPrompt) -> Result<(ModelResponse, u32)> {
        model.validate()?;
        let credential = self.credential(model)?;
        if let Some(limit) = model.context_limit {
            let estimated = Self::estimate_tokens(model, &prompt.text);
            if estimated > limit {
                return Err(Error::PromptTooLong {
                    model_id: model.model_id.clone(),
                    item_id: prompt.item_id.clone(),
                    estimated,
                    limit,
                });
            }
        }
        let transport = self.transport(model);
        let provider_key = (model.provider, model.endpoint.clone());
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.wait_for_provider(&provider_key);
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            let err = match transport.send(model, prompt, credential.as_deref()) {
                Ok(resp) => {
                    if resp.text.is_empty() && resp.is_normal_finish() {
                        return Err(Error::Provider {
                            model_id: model.model_id.clone(),
                            detail: "empty response with a normal finish reason".into(),
                        });
                    }
                    info!(
                        "model {} item {}: ok after {attempt} attempt(s)",
                        model.model_id, prompt.item_id
                    );
                    return Ok((resp, attempt));
                }
                Err(e) => e,
            };
            if err.is_auth() {
                return Err(Error::Auth {
                    model_id: model.model_id.clone(),
                    detail: err.status_text(),
                });
            }
            if !err.is_transient() {
                return Err(Error::Provider {
                    model_id: model.model_id.clone(),
                    detail: err.status_text(),
                });
            }
            warn!(
                "model {} item {}: attempt {attempt}/{max_attempts} failed: {}",
                model.model_id,
                prompt.item_id,
                err.status_text()
            );
            if attempt >= max_attempts {
                return Err(Error::RetriesExhausted {
                    model_id: model.model_id.clone(),
                    attempts: attempt,
                    last_status: err.status_text(),
                });
            }
            let mut delay = self.jitter.delay(&self.retry, attempt);
            if let crate::llm::TransportError::Status { retry_after: Some(ra), .. } = &err {
                delay = delay.max(*ra);
            }
            if err.is_rate_limit() {
                let until = Instant::now() + delay;
                let mut gates = self.backoff.lock().expect("backoff lock");
                let slot = gates.entry(provider_key.clone()).or_insert(until);
                if *slot < until {
                    *slot = until;
                }
            } else {
                self.sleeper.sleep(delay);
            }
        }
    }

    fn record(
        &self,
        model: &ModelSpec,
        prompt: &RenderedPrompt,
        resp: &ModelResponse,
        cached: bool,
        attempts: u32,
    ) -> Result<()> {
        let Some(ledger) = &self.ledger else {
            return Ok(());
        };
        ledger.record(ProvenanceRecord {
            run_id: self.run_id.clone(),
            model_id: model.model_id.clone(),
            prompt_version_id: prompt.version_id.clone(),
            item_id: prompt.item_id.clone(),
            request_digest: request_digest(model, prompt)?,
            raw_response: resp.text.clone(),
            token_usage: TokenUsage {
                input_tokens: resp.input_tokens,
                output_tokens: resp.output_tokens,
            },
            latency_ms: resp.latency_ms,
            cached,
            attempts,
            created_at: Utc::now(),
        })?;
        Ok(())
    }

    /// One uncached call with retries; the response is recorded before it is returned.
    pub fn complete(&self, model: &ModelSpec, prompt: &RenderedPrompt) -> Result<ModelResponse> {
        let (resp, attempts) = self.call(model, prompt)?;
        self.record(model, prompt, &resp, false, attempts)?;
        Ok(resp)
    }

    /// Like [`complete`](Self::complete) but served from the cache when possible.
    ///
    /// Falls back to an uncached call when no cache is attached.
    pub fn cached_complete(&self, model: &ModelSpec, prompt: &RenderedPrompt) -> Result<ModelResponse> {
        let Some(cache) = &self.cache else {
            return self.complete(model, prompt);
        };
        model.validate()?;
        let key = cache_key(&model.model_id, &model.params, &prompt.text)?;
        if let Some(hit) = cache.get(&key) {
            self.record(model, prompt, &hit, true, 0)?;
            return Ok(hit);
        }
        let (resp, attempts) = self.call(model, prompt)?;
        cache.put(&key, &resp)?;
        self.record(model, prompt, &resp, false, attempts)?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;
    use crate::llm::{MockBehavior, NoSleep, TransportError};

    /// Replays a fixed script of outcomes, one per call.
    struct Scripted {
        script: Mutex<VecDeque<std::result::Result<ModelResponse, TransportError>>>,
    }

    impl Scripted {
        fn new(items: Vec<std::result::Result<ModelResponse, TransportError>>) -> Self {
            Self {
                script: Mutex::new(items.into()),
            }
        }
    }

    impl Transport for Scripted {
        fn send(
            &self,
            _: &ModelSpec,
            _: &RenderedPrompt,
            _: Option<&str>,
        ) -> std::result::Result<ModelResponse, TransportError> {
            self.script
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or(Err(TransportError::Network("script exhausted".into())))
        }
    }

    fn ok(text: &str) -> std::result::Result<ModelResponse, TransportError> {
        Ok(ModelResponse {
            text: text.into(),
            input_tokens: 10,
            output_tokens: 2,
            latency_ms: 5,
            finish_reason: "stop".into(),
        })
    }

    fn status(code: u16) -> std::result::Result<ModelResponse, TransportError> {
        Err(TransportError::Status {
            code,
            body: "slow down".into(),
            retry_after: None,
        })
    }

    fn http_model() -> ModelSpec {
        let mut m = ModelSpec::mock("remote", MockBehavior::Echo);
        m.provider = ProviderKind::OpenaiCompatibleHttp;
        m.mock = None;
        m.credential_env = Some("PRIMES_TEST_KEY".into());
        m
    }

    fn prompt(item: &str) -> RenderedPrompt {
        RenderedPrompt {
            text: "classify this".into(),
            version_id: "v1".into(),
            item_id: item.into(),
        }
    }

    fn client(script: Vec<std::result::Result<ModelResponse, TransportError>>) -> (LlmClient, Arc<NoSleep>, Arc<ProvenanceLedger>) {
        let sleeper = Arc::new(NoSleep::default());
        let ledger = Arc::new(ProvenanceLedger::in_memory());
        let c = LlmClient::new("run")
            .with_http_transport(Arc::new(Scripted::new(script)))
            .with_sleeper(sleeper.clone())
            .with_ledger(ledger.clone())
            .with_credentials(|_| Some("secret".into()));
        (c, sleeper, ledger)
    }

    #[test]
    fn transient_429_then_success() {
        let (c, sleeper, ledger) = client(vec![status(429), ok("fine")]);
        let r = c.complete(&http_model(), &prompt("a")).unwrap();
        assert_eq!(r.text, "fine");
        assert_eq!(c.network_calls(), 2);
        let recs = ledger.records();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].attempts, 2);
        assert!(sleeper.slept.lock().unwrap().len() <= 1);
    }

    #[test]
    fn retries_exhausted_reports_last_status() {
        let (c, sleeper, ledger) = client(vec![status(503); 5]);
        let err = c.complete(&http_model(), &prompt("a")).unwrap_err();
        match err {
            Error::RetriesExhausted { attempts, last_status, .. } => {
                assert_eq!(attempts, 5);
                assert!(last_status.contains("503"));
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(c.network_calls(), 5);
        let slept = sleeper.slept.lock().unwrap();
        assert_eq!(slept.len(), 4);
        for (i, d) in slept.iter().enumerate() {
            assert!(*d <= RetryPolicy::default().ceiling(i as u32 + 1));
        }
        assert!(ledger.is_empty());
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let (c, _, ledger) = client(vec![status(401), ok("never")]);
        assert!(matches!(c.complete(&http_model(), &prompt("a")), Err(Error::Auth { .. })));
        assert_eq!(c.network_calls(), 1);
        assert!(ledger.is_empty());
    }

    #[test]
    fn missing_credential_env_is_preflight_auth_error() {
        let ledger = Arc::new(ProvenanceLedger::in_memory());
        let c = LlmClient::new("run")
            .with_http_transport(Arc::new(Scripted::new(vec![ok("x")])))
            .with_ledger(ledger.clone())
            .with_credentials(|_| None);
        assert!(matches!(c.complete(&http_model(), &prompt("a")), Err(Error::Auth { .. })));
        assert_eq!(c.network_calls(), 0);
        assert!(ledger.is_empty());
    }

    #[test]
    fn over_length_prompt_rejected_before_network() {
        let (c, _, ledger) = client(vec![ok("x")]);
        let mut m = http_model();
        m.context_limit = Some(2);
        let mut p = prompt("a");
        p.text = "x".repeat(100);
        assert!(matches!(c.complete(&m, &p), Err(Error::PromptTooLong { .. })));
        assert_eq!(c.network_calls(), 0);
        assert!(ledger.is_empty());
    }

    #[test]
    fn cache_hits_skip_network_and_still_record() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Arc::new(ProvenanceLedger::in_memory());
        let mut c = LlmClient::new("r1")
            .with_cache(ResponseCache::open(dir.path()).unwrap())
            .with_ledger(ledger.clone());
        let m = ModelSpec::mock("m", MockBehavior::Echo);
        let a = c.cached_complete(&m, &prompt("a")).unwrap();
        assert_eq!(c.network_calls(), 1);
        c.set_run_id("r2");
        let b = c.cached_complete(&m, &prompt("a")).unwrap();
        assert_eq!(c.network_calls(), 1);
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let recs = ledger.records();
        assert_eq!(recs.len(), 2);
        assert!(!recs[0].cached && recs[1].cached);
        assert_eq!(recs[0].request_digest, recs[1].request_digest);

        let mut warm = m.clone();
        warm.params.temperature = 0.5;
        c.set_run_id("r3");
        c.cached_complete(&warm, &prompt("a")).unwrap();
        assert_eq!(c.network_calls(), 2);

        c.cache().unwrap().clear().unwrap();
        c.set_run_id("r4");
        c.cached_complete(&m, &prompt("a")).unwrap();
        assert_eq!(c.network_calls(), 3);
    }

    #[test]
    fn duplicate_triple_in_one_run_rejected() {
        let ledger = Arc::new(ProvenanceLedger::in_memory());
        let c = LlmClient::new("r").with_ledger(ledger.clone());
        let m = ModelSpec::mock("m", MockBehavior::Echo);
        c.complete(&m, &prompt("a")).unwrap();
        assert!(matches!(c.complete(&m, &prompt("a")), Err(Error::DuplicateRecord { .. })));
    }

    #[test]
    fn rate_limit_gate_is_shared_per_provider() {
        let (c, sleeper, _) = client(vec![status(429), ok("a"), ok("b")]);
        let m = http_model();
        c.complete(&m, &prompt("a")).unwrap();
        let gates = c.backoff.lock().unwrap();
        assert!(gates.contains_key(&(m.provider, m.endpoint.clone())));
        drop(gates);
        let before = sleeper.slept.lock().unwrap().len();
        c.complete(&m, &prompt("b")).unwrap();
        // the second call found the gate already expired or waited it out
        assert!(sleeper.slept.lock().unwrap().len() >= before);
    }
}
