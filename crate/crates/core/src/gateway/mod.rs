//! Uniform access to chat and reasoning models.
//!
//! [`Gateway::complete`] wraps every provider call with a context-window
//! check, a content-addressed response cache, a per-provider concurrency
//! bound and bounded exponential backoff on rate limiting.

mod cache;
mod config;
mod http;
mod mock;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

pub use cache::ResponseCache;
pub use config::{load_provider_config, ModelConfig, ProviderConfig, ProviderKind};
pub use http::OpenAiCompatProvider;
pub use mock::{MockProvider, MockRule, MockScript};

use crate::tokenize::{BpeEstimator, Tokenizer};

/// Serde helpers for prices: JSON numbers are read through their shortest
/// decimal representation so `0.40` becomes exactly `0.4`.
pub mod price {
    use rust_decimal::Decimal;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::str::FromStr;

    pub fn serialize<S: Serializer>(d: &Decimal, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&d.normalize().to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Decimal, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(f) => format!("{f}"),
            Raw::Str(s) => s,
        };
        Decimal::from_str(text.trim()).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHandle {
    pub provider_id: String,
    pub model_id: String,
    #[serde(default)]
    pub supports_raw_cot: bool,
    #[serde(with = "price")]
    pub price_in_usd_per_1m: Decimal,
    #[serde(with = "price")]
    pub price_out_usd_per_1m: Decimal,
    pub context_window: usize,
}

impl ModelHandle {
    /// `provider/model`, used in file names and reports.
    pub fn label(&self) -> String {
        format!("{}/{}", self.provider_id, self.model_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self::assess()
    }
}

impl SamplingConfig {
    /// Profile `assess`: temperature 0.7, top_p 1.0, 8192 new tokens.
    pub fn assess() -> Self {
        SamplingConfig {
            temperature: 0.7,
            top_p: 1.0,
            max_new_tokens: 8192,
            seed: None,
        }
    }

    /// Profile `prt-gen`: as `assess` but capped at 2048 new tokens.
    pub fn prt_gen() -> Self {
        SamplingConfig {
            max_new_tokens: 2048,
            ..Self::assess()
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "assess" => Some(Self::assess()),
            "prt-gen" => Some(Self::prt_gen()),
            _ => None,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let ok =
            (0.0..=2.0).contains(&self.temperature) && self.top_p > 0.0 && self.top_p <= 1.0 && self.max_new_tokens > 0;
        if ok {
            Ok(())
        } else {
            Err(GatewayError::InvalidSampling(*self))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub raw_cot: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub cache_hit: bool,
}

/// What a provider hands back; token counts are filled in by the gateway
/// when the provider does not report them.
#[derive(Debug, Clone, Default)]
pub struct ProviderReply {
    pub text: String,
    pub raw_cot: Option<String>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("timed out")]
    Timeout,
    #[error("no scripted response matches prompt (first 80 chars: {0:?})")]
    UnmatchedPrompt(String),
    #[error("{0}")]
    Other(String),
}

pub trait Provider: Send + Sync {
    fn call(&self, model: &ModelHandle, prompt: &str, cfg: &SamplingConfig) -> Result<ProviderReply, ProviderError>;
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("invalid sampling config {0:?}")]
    InvalidSampling(SamplingConfig),
    #[error("context overflow: ~{prompt_tokens} prompt tokens + {max_new_tokens} new tokens > window {window}")]
    ContextOverflow {
        prompt_tokens: usize,
        max_new_tokens: u32,
        window: usize,
    },
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("unmatched prompt: {0}")]
    UnmatchedPrompt(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("cache: {0}")]
    Cache(String),
}

/// Backoff schedule for rate-limited and timed-out calls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max_attempts: u32,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::from_secs(1),
            factor: 2.0,
            max_attempts: 5,
            timeout: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Counting semaphore bounding in-flight requests per provider.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct ProviderSlot {
    provider: Arc<dyn Provider>,
    limit: Semaphore,
}

pub struct Gateway {
    providers: HashMap<String, ProviderSlot>,
    cache: ResponseCache,
    retry: RetryPolicy,
    tokenizer: Arc<dyn Tokenizer>,
    sleeper: Arc<dyn Sleeper>,
    provider_calls: AtomicU64,
}

impl Default for Gateway {
    fn default() -> Self {
        Gateway::new(ResponseCache::disabled())
    }
}

impl Gateway {
    pub fn new(cache: ResponseCache) -> Self {
        Gateway {
            providers: HashMap::new(),
            cache,
            retry: RetryPolicy::default(),
            tokenizer: Arc::new(BpeEstimator),
            sleeper: Arc::new(ThreadSleeper),
            provider_calls: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn has_provider(&self, provider_id: &str) -> bool {
        self.providers.contains_key(provider_id)
    }

    pub fn register(&mut self, provider_id: &str, provider: Arc<dyn Provider>, max_in_flight: usize) {
        self.providers.insert(
            provider_id.to_string(),
            ProviderSlot {
                provider,
                limit: Semaphore::new(max_in_flight),
            },
        );
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    /// Number of calls that reached a provider (cache hits excluded).
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn complete(
        &self,
        handle: &ModelHandle,
        prompt: &str,
        cfg: &SamplingConfig,
    ) -> Result<ModelResponse, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        cfg.validate()?;
        let prompt_tokens = self.tokenizer.count(prompt);
        if prompt_tokens + cfg.max_new_tokens as usize > handle.context_window {
            return Err(GatewayError::ContextOverflow {
                prompt_tokens,
                max_new_tokens: cfg.max_new_tokens,
                window: handle.context_window,
            });
        }
        let slot = self
            .providers
            .get(&handle.provider_id)
            .ok_or_else(|| GatewayError::UnknownProvider(handle.provider_id.clone()))?;

        let key = cache_key(handle, prompt, cfg);
        let _key_guard = self.cache.lock_key(&key);
        if let Some(mut hit) = self.cache.get(&key)? {
            hit.cache_hit = true;
            return Ok(hit);
        }

        let started = std::time::Instant::now();
        let reply = {
            let _permit = slot.limit.acquire();
            self.call_with_retry(slot.provider.as_ref(), handle, prompt, cfg)?
        };
        let response = ModelResponse {
            prompt_tokens: reply.prompt_tokens.unwrap_or(prompt_tokens as u64),
            completion_tokens: reply
                .completion_tokens
                .unwrap_or_else(|| self.tokenizer.count(&reply.text) as u64),
            text: reply.text,
            raw_cot: reply.raw_cot.filter(|_| handle.supports_raw_cot),
            latency_ms: started.elapsed().as_millis() as u64,
            cache_hit: false,
        };
        self.cache.put(&key, &response)?;
        Ok(response)
    }

    fn call_with_retry(
        &self,
        provider: &dyn Provider,
        handle: &ModelHandle,
        prompt: &str,
        cfg: &SamplingConfig,
    ) -> Result<ProviderReply, GatewayError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            match provider.call(handle, prompt, cfg) {
                Ok(reply) => return Ok(reply),
                Err(e @ (ProviderError::RateLimited { .. } | ProviderError::Timeout))
                    if attempt < self.retry.max_attempts =>
                {
                    let hinted = match e {
                        ProviderError::RateLimited { retry_after } => retry_after,
                        _ => None,
                    };
                    let wait = hinted.unwrap_or_else(|| self.retry.delay(attempt));
                    tracing::warn!(model = %handle.label(), attempt, ?wait, "retrying");
                    self.sleeper.sleep(wait);
                }
                Err(ProviderError::RateLimited { .. }) | Err(ProviderError::Timeout) => {
                    return Err(GatewayError::RateLimited { attempts: attempt })
                }
                Err(ProviderError::UnmatchedPrompt(p)) => return Err(GatewayError::UnmatchedPrompt(p)),
                Err(ProviderError::Other(msg)) => return Err(GatewayError::Provider(msg)),
            }
        }
    }
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    provider_id: &'a str,
    model_id: &'a str,
    prompt: &'a str,
    temperature: String,
    top_p: String,
    max_new_tokens: u32,
    seed: Option<u64>,
}

/// Content hash over everything that determines a completion.
///
/// Floats are encoded through their shortest round-trip decimal form so the
/// key does not depend on platform float formatting.
pub fn cache_key(handle: &ModelHandle, prompt: &str, cfg: &SamplingConfig) -> String {
    let material = KeyMaterial {
        provider_id: &handle.provider_id,
        model_id: &handle.model_id,
        prompt,
        temperature: format!("{:?}", cfg.temperature),
        top_p: format!("{:?}", cfg.top_p),
        max_new_tokens: cfg.max_new_tokens,
        seed: cfg.seed,
    };
    crate::sha256_hex(serde_json::to_vec(&material).expect("serializable key"))
}

/// A model bound to a gateway and sampling profile.
#[derive(Clone, Copy)]
pub struct Model<'a> {
    pub gateway: &'a Gateway,
    pub handle: &'a ModelHandle,
    pub sampling: SamplingConfig,
}

impl<'a> Model<'a> {
    pub fn new(gateway: &'a Gateway, handle: &'a ModelHandle, sampling: SamplingConfig) -> Self {
        Model {
            gateway,
            handle,
            sampling,
        }
    }

    pub fn ask(&self, prompt: &str) -> Result<ModelResponse, GatewayError> {
        self.ask_attempt(prompt, 0)
    }

    /// Retry attempts perturb the seed so they are not served from cache.
    pub fn ask_attempt(&self, prompt: &str, attempt: u32) -> Result<ModelResponse, GatewayError> {
        let mut cfg = self.sampling;
        if attempt > 0 {
            cfg.seed = Some(cfg.seed.unwrap_or(0).wrapping_add(attempt as u64));
        }
        self.gateway.complete(self.handle, prompt, &cfg)
    }
}
