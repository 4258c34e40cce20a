//! Uniform chat-completion interface over heterogeneous providers.
//!
//! Every provider is normalized to a single-message user-role chat call at
//! temperature 0. The gateway layers on top of the raw calls: a
//! content-addressed response cache so interrupted runs resume without
//! re-querying, exponential-backoff retries on transient failures, a
//! per-run request budget, a shared per-provider rate limiter, and counters
//! that tests use to assert call economics. A rule-based mock backend makes
//! entire experiment runs bit-reproducible offline.
//!
//! Credentials come from one environment variable per provider
//! (`OPENAI_API_KEY`, `ANTHROPIC_API_KEY`, `GOOGLE_API_KEY`), overridable
//! through [`GatewayConfig::api_keys`].

mod cache;
mod http;
mod mock;

pub use cache::CacheEntry;
pub use mock::{MockBackend, MockRule};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::RenderedPrompt;
use cache::ResponseCache;

/// Provider wire protocol families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provider {
    OpenaiCompatible,
    AnthropicCompatible,
    GoogleCompatible,
    Mock,
}

impl Provider {
    pub fn api_key_env(self) -> Option<&'static str> {
        match self {
            Provider::OpenaiCompatible => Some("OPENAI_API_KEY"),
            Provider::AnthropicCompatible => Some("ANTHROPIC_API_KEY"),
            Provider::GoogleCompatible => Some("GOOGLE_API_KEY"),
            Provider::Mock => None,
        }
    }

    fn default_base_url(self) -> &'static str {
        match self {
            Provider::OpenaiCompatible => "https://api.openai.com/v1",
            Provider::AnthropicCompatible => "https://api.anthropic.com",
            Provider::GoogleCompatible => "https://generativelanguage.googleapis.com",
            Provider::Mock => "",
        }
    }
}

/// One model endpoint as used in the experiment matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub provider: Provider,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_cutoff: Option<NaiveDate>,
    pub max_output_tokens: u32,
    /// Endpoint override, so several openai-compatible hosts can share one
    /// run matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Credential env var override for the same reason.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl ModelSpec {
    pub fn new(provider: Provider, model_id: impl Into<String>, max_output_tokens: u32) -> Result<Self, GatewayError> {
        let model_id = model_id.into();
        if model_id.is_empty() {
            return Err(GatewayError::Config("model_id must be non-empty".into()));
        }
        if max_output_tokens == 0 {
            return Err(GatewayError::Config("max_output_tokens must be >= 1".into()));
        }
        Ok(Self {
            provider,
            model_id,
            knowledge_cutoff: None,
            max_output_tokens,
            base_url: None,
            api_key_env: None,
        })
    }

    pub fn mock(model_id: impl Into<String>) -> Self {
        Self::new(Provider::Mock, model_id, 2048).expect("valid mock spec")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.is_empty() {
            return Err(GatewayError::Config("model_id must be non-empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::Config("max_output_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// A completion request. Temperature is fixed to 0.0 by contract and
/// enforced at construction.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub model: ModelSpec,
    pub prompt: RenderedPrompt,
    temperature: f64,
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn new(model: ModelSpec, prompt: RenderedPrompt, request_tag: impl Into<String>) -> Self {
        Self { model, prompt, temperature: 0.0, request_tag: request_tag.into() }
    }

    /// Construction with an explicit temperature; anything other than 0.0 is
    /// rejected.
    pub fn with_temperature(
        model: ModelSpec,
        prompt: RenderedPrompt,
        request_tag: impl Into<String>,
        temperature: f64,
    ) -> Result<Self, GatewayError> {
        if temperature != 0.0 {
            return Err(GatewayError::TemperatureContract(temperature));
        }
        Ok(Self::new(model, prompt, request_tag))
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// The outcome of a completion call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    /// Wall time of the original provider call; preserved on cache hits.
    pub latency_ms: u64,
    pub from_cache: bool,
    pub attempts: u32,
    /// The provider reported that output hit the token limit. Surfaced as a
    /// record warning, never an error.
    pub truncated: bool,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request budget of {limit} calls exhausted")]
    BudgetExceeded { limit: u64 },
    #[error("provider error after {attempts} attempt(s): {message}")]
    Provider { message: String, attempts: u32 },
    #[error("temperature contract violated: expected 0.0, got {0}")]
    TemperatureContract(f64),
    #[error("invalid mock rule pattern {pattern:?}: {message}")]
    InvalidPattern { pattern: String, message: String },
    #[error("gateway configuration error: {0}")]
    Config(String),
    #[error("cache io error: {0}")]
    CacheIo(#[from] std::io::Error),
}

/// Tunables for retries, budgets, rate limiting, and endpoints.
#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// None disables the response cache.
    pub cache_dir: Option<PathBuf>,
    /// Per-run provider-call ceiling.
    pub budget: u64,
    pub max_retries: u32,
    pub retry_base: Duration,
    pub retry_cap: Duration,
    /// Minimum spacing between calls to the same provider.
    pub min_request_interval: Duration,
    pub request_timeout: Duration,
    /// Per-provider base URL overrides (testing, self-hosted endpoints).
    pub base_urls: BTreeMap<Provider, String>,
    /// Per-provider API key overrides; the provider env var is the default.
    pub api_keys: BTreeMap<Provider, String>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            cache_dir: None,
            budget: 50_000,
            max_retries: 3,
            retry_base: Duration::from_millis(500),
            retry_cap: Duration::from_secs(30),
            min_request_interval: Duration::ZERO,
            request_timeout: Duration::from_secs(60),
            base_urls: BTreeMap::new(),
            api_keys: BTreeMap::new(),
        }
    }
}

/// Snapshot of the gateway's instrumentation counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Actual provider calls (cache hits excluded).
    pub provider_calls: u64,
    pub cache_hits: u64,
    /// Provider calls keyed by the first `/`-separated segment of the
    /// request tag (e.g. `stage1`, `stage2`).
    pub calls_by_tag: BTreeMap<String, u64>,
}

enum AttemptError {
    Transient(String),
    Auth(String),
    Fatal(String),
}

struct ProviderResponse {
    text: String,
    truncated: bool,
}

/// The completion gateway. Safe to share across worker threads.
pub struct Gateway {
    config: GatewayConfig,
    cache: Option<ResponseCache>,
    mock: MockBackend,
    used_budget: AtomicU64,
    last_call: Mutex<BTreeMap<Provider, Instant>>,
    stats: Mutex<GatewayStats>,
    client: OnceLock<reqwest::blocking::Client>,
    /// Test hook: sleeps are skipped when zero retry base is configured.
    sleeper: fn(Duration),
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let cache = config.cache_dir.as_ref().map(ResponseCache::new).transpose()?;
        Ok(Self {
            config,
            cache,
            mock: MockBackend::synthesized(),
            used_budget: AtomicU64::new(0),
            last_call: Mutex::new(BTreeMap::new()),
            stats: Mutex::new(GatewayStats::default()),
            client: OnceLock::new(),
            sleeper: std::thread::sleep,
        })
    }

    /// Replace the mock backend (rulebooks come from fixture files).
    pub fn with_mock(mut self, mock: MockBackend) -> Self {
        self.mock = mock;
        self
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats.lock().expect("stats lock").clone()
    }

    /// Whether the cache already holds an entry for this key. Used by cost
    /// estimation.
    pub fn is_cached(&self, model_id: &str, content_hash: &str) -> bool {
        match (&self.config.cache_dir, &self.cache) {
            (Some(root), Some(_)) => cache::cache_paths_exist(root, model_id, content_hash),
            _ => false,
        }
    }

    /// The cached response text for a key, if present. Used by cost
    /// estimation to reconstruct prompts that embed earlier responses.
    pub fn cached_text(&self, model_id: &str, content_hash: &str) -> Option<String> {
        let cache = self.cache.as_ref()?;
        cache.get(model_id, content_hash).ok().flatten().map(|e| e.text)
    }

    pub fn budget_used(&self) -> u64 {
        self.used_budget.load(Ordering::SeqCst)
    }

    /// Complete a request, serving from the cache when possible.
    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        self.complete_inner(req, true)
    }

    /// Complete a request bypassing the cache read (the result still lands
    /// in the cache). Used for the one automatic re-query after a failed
    /// parse.
    pub fn complete_fresh(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        self.complete_inner(req, false)
    }

    fn complete_inner(
        &self,
        req: &CompletionRequest,
        use_cache: bool,
    ) -> Result<CompletionResult, GatewayError> {
        req.model.validate()?;
        if use_cache {
            if let Some(cache) = &self.cache {
                if let Some(entry) = cache.get(&req.model.model_id, &req.prompt.content_hash)? {
                    self.stats.lock().expect("stats lock").cache_hits += 1;
                    return Ok(CompletionResult {
                        text: entry.text,
                        latency_ms: entry.latency_ms,
                        from_cache: true,
                        attempts: entry.attempts,
                        truncated: entry.truncated,
                    });
                }
            }
        }
        self.take_budget()?;
        self.rate_limit(req.model.provider);

        let started = Instant::now();
        let mut attempts = 0u32;
        let response = loop {
            attempts += 1;
            match self.call_provider(req) {
                Ok(resp) => break resp,
                Err(AttemptError::Auth(message)) => return Err(GatewayError::Auth(message)),
                Err(AttemptError::Fatal(message)) => {
                    return Err(GatewayError::Provider { message, attempts });
                }
                Err(AttemptError::Transient(message)) => {
                    if attempts > self.config.max_retries {
                        return Err(GatewayError::Provider { message, attempts });
                    }
                    let backoff = self
                        .config
                        .retry_base
                        .saturating_mul(2u32.saturating_pow(attempts - 1))
                        .min(self.config.retry_cap);
                    (self.sleeper)(backoff);
                }
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        {
            let mut stats = self.stats.lock().expect("stats lock");
            stats.provider_calls += 1;
            let tag = req.request_tag.split('/').next().unwrap_or("").to_string();
            *stats.calls_by_tag.entry(tag).or_default() += 1;
        }

        let result = CompletionResult {
            text: response.text,
            latency_ms,
            from_cache: false,
            attempts,
            truncated: response.truncated,
        };
        if let Some(cache) = &self.cache {
            cache.put(req, &result)?;
        }
        Ok(result)
    }

    fn take_budget(&self) -> Result<(), GatewayError> {
        let limit = self.config.budget;
        let mut current = self.used_budget.load(Ordering::SeqCst);
        loop {
            if current >= limit {
                return Err(GatewayError::BudgetExceeded { limit });
            }
            match self.used_budget.compare_exchange(
                current,
                current + 1,
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => return Ok(()),
                Err(actual) => current = actual,
            }
        }
    }

    fn rate_limit(&self, provider: Provider) {
        let interval = self.config.min_request_interval;
        if interval.is_zero() {
            return;
        }
        let wait = {
            let mut last = self.last_call.lock().expect("rate limiter lock");
            let now = Instant::now();
            let ready = match last.get(&provider) {
                Some(&prev) => prev + interval,
                None => now,
            };
            let effective = ready.max(now);
            last.insert(provider, effective);
            effective.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            (self.sleeper)(wait);
        }
    }

    fn call_provider(&self, req: &CompletionRequest) -> Result<ProviderResponse, AttemptError> {
        match req.model.provider {
            Provider::Mock => Ok(self.mock.respond(&req.prompt.text)),
            provider => {
                let base_url = req
                    .model
                    .base_url
                    .clone()
                    .or_else(|| self.config.base_urls.get(&provider).cloned())
                    .unwrap_or_else(|| provider.default_base_url().to_string());
                let api_key = self.api_key(provider, req.model.api_key_env.as_deref())?;
                let client = self.client.get_or_init(|| {
                    reqwest::blocking::Client::builder()
                        .timeout(self.config.request_timeout)
                        .build()
                        .expect("http client")
                });
                http::call(client, provider, &base_url, &api_key, req)
            }
        }
    }

    fn api_key(&self, provider: Provider, env_override: Option<&str>) -> Result<String, AttemptError> {
        if let Some(key) = self.config.api_keys.get(&provider) {
            return Ok(key.clone());
        }
        let var = env_override
            .unwrap_or_else(|| provider.api_key_env().expect("non-mock provider has a key env var"));
        std::env::var(var)
            .map_err(|_| AttemptError::Auth(format!("missing credentials: set {var}")))
    }
}
