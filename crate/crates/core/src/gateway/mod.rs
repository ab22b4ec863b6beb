//! Model gateway: every model/API call in the pipeline flows through here.
//!
//! The gateway owns provider configuration, per-provider rate limiting,
//! bounded retries, and the record/replay cassette store. Pipeline stages
//! build a [`ChatRequest`], call [`Gateway::complete`], and never touch the
//! network directly — which is what makes fully offline, byte-deterministic
//! replay runs possible.

mod cassette;
mod ratelimit;
mod stub;
mod transport;

pub use cassette::{Cassette, CassetteEntry};
pub use ratelimit::TokenBucket;
pub use stub::StubTransport;
pub use transport::{HttpTransport, Transport, TransportError};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util;

/// Traffic mode for a gateway instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Call providers directly; never touch cassettes.
    Live,
    /// Call providers on cassette miss and persist every new response.
    Record,
    /// Serve exclusively from cassettes; a miss is an error.
    #[default]
    Replay,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        };
        f.write_str(name)
    }
}

/// Where a completed response came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Live,
    Replay,
}

/// Wire protocol family spoken by a provider endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// OpenAI-style chat completions: system + user messages in, text out.
    Chat,
    /// Single-question answer endpoint: `{"question": ...}` in,
    /// `{"answer": ...}` out. Used for search engines under test that
    /// expose a plain answer API rather than a chat interface.
    AnswerApi,
}

/// How requests physically reach a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Http,
    /// In-process deterministic simulator, used to build offline fixtures
    /// and to exercise the pipeline without network access.
    Stub,
}

fn default_rpm() -> u32 {
    60
}

fn default_timeout_secs() -> u64 {
    60
}

/// Static description of one upstream provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub transport: TransportKind,
    /// Full endpoint URL (e.g. `https://api.example.com/v1/chat/completions`).
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the bearer token, if the
    /// endpoint needs one. The key itself never appears in config or logs.
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub model: String,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Behaviour profile for the stub transport.
    #[serde(default)]
    pub stub_profile: Option<String>,
}

/// One logical model call. Stages construct these; the gateway executes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub provider: String,
    pub model: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
}

/// Result of a completed model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub request_key: String,
    pub latency_ms: u64,
    pub source: Source,
    /// When the response was produced: wall clock for live calls, the
    /// cassette's `recorded_at` under replay, so replayed runs never see
    /// the current clock.
    pub timestamp: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown provider: {0}")]
    UnknownProvider(String),
    #[error("cassette miss for provider {provider}, key {key}")]
    CassetteMiss { provider: String, key: String },
    #[error("provider call failed after {attempts} attempt(s): {cause}")]
    Provider { attempts: u32, cause: String },
    #[error("provider call timed out: {0}")]
    Timeout(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("cassette io: {0}")]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    /// Stable short code for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::InvalidRequest(_) => "invalid_request",
            GatewayError::UnknownProvider(_) => "unknown_provider",
            GatewayError::CassetteMiss { .. } => "cassette_miss",
            GatewayError::Provider { .. } => "provider",
            GatewayError::Timeout(_) => "timeout",
            GatewayError::MalformedPayload(_) => "malformed_payload",
            GatewayError::Io(_) => "io",
        }
    }
}

/// Normalizes prompt text for keying: CRLF/CR become LF and trailing
/// whitespace is stripped from every line. Cosmetic line-ending differences
/// must not produce distinct cassette entries.
fn canonical_text(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    unified
        .split('\n')
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.provider.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("provider must be non-empty".into()));
        }
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("model must be non-empty".into()));
        }
        if self.system_prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("system_prompt must be non-empty".into()));
        }
        if self.user_prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("user_prompt must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) || self.temperature.is_nan() {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Copy of the request with prompts normalized by [`canonical_text`].
    pub fn canonicalized(&self) -> ChatRequest {
        ChatRequest {
            provider: self.provider.clone(),
            model: self.model.clone(),
            system_prompt: canonical_text(&self.system_prompt),
            user_prompt: canonical_text(&self.user_prompt),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub fn request_key(&self) -> String {
        request_key(self)
    }
}

/// Content-addressed identity of a request: SHA-256 over the canonical JSON
/// serialization (sorted keys) of the canonicalized request.
pub fn request_key(request: &ChatRequest) -> String {
    let canonical = request.canonicalized();
    let value = serde_json::to_value(&canonical).expect("request serializes to JSON");
    let json = serde_json::to_string(&value).expect("JSON value serializes");
    util::sha256_hex(json.as_bytes())
}

/// Parses a model response that is expected to be JSON, tolerating a
/// markdown code fence (```json ... ``` or ``` ... ```) around the payload.
/// Anything else — prose around the JSON, truncated output — is a
/// [`GatewayError::MalformedPayload`].
pub fn extract_json(text: &str) -> Result<serde_json::Value, GatewayError> {
    let trimmed = text.trim();
    let body = strip_fence(trimmed).trim();
    serde_json::from_str(body)
        .map_err(|e| GatewayError::MalformedPayload(format!("response is not valid JSON: {e}")))
}

fn strip_fence(text: &str) -> &str {
    if let Some(rest) = text.strip_prefix("```") {
        // Drop the info string ("json", "JSON", or empty) up to the first
        // newline, then require a closing fence.
        if let Some(newline) = rest.find('\n') {
            let inner = &rest[newline + 1..];
            if let Some(body) = inner.trim_end().strip_suffix("```") {
                return body;
            }
        }
    }
    text
}

/// Injectable clock pause, so tests can observe backoff and rate-limit
/// waits without actually sleeping.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

/// Default sleeper backed by `std::thread::sleep`.
pub struct SystemSleeper;

impl Sleeper for SystemSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

#[derive(Debug, Clone, Copy)]
struct RetryPolicy {
    max_attempts: u32,
    base_backoff: Duration,
    factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_backoff: Duration::from_secs(1), factor: 2 }
    }
}

/// Thread-safe front door for all provider traffic.
pub struct Gateway {
    providers: BTreeMap<String, ProviderConfig>,
    mode: Mode,
    cassette_dir: PathBuf,
    cassettes: Mutex<BTreeMap<String, Cassette>>,
    limiters: Mutex<BTreeMap<String, TokenBucket>>,
    http: HttpTransport,
    stub: StubTransport,
    transport_override: Option<Box<dyn Transport>>,
    sleeper: Box<dyn Sleeper>,
    retry: RetryPolicy,
}

impl Gateway {
    /// Builds a gateway whose cassettes live in `cassette_dir` (one
    /// `<provider>.jsonl` file per provider).
    pub fn new(
        providers: BTreeMap<String, ProviderConfig>,
        mode: Mode,
        cassette_dir: impl AsRef<Path>,
    ) -> Self {
        Gateway {
            providers,
            mode,
            cassette_dir: cassette_dir.as_ref().to_path_buf(),
            cassettes: Mutex::new(BTreeMap::new()),
            limiters: Mutex::new(BTreeMap::new()),
            http: HttpTransport::new(),
            stub: StubTransport,
            transport_override: None,
            sleeper: Box::new(SystemSleeper),
            retry: RetryPolicy::default(),
        }
    }

    /// Replaces the sleeper (tests observe waits instead of sleeping).
    pub fn with_sleeper(mut self, sleeper: Box<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// Routes every provider through the given transport regardless of its
    /// configured transport kind. Intended for tests.
    pub fn with_transport_override(mut self, transport: Box<dyn Transport>) -> Self {
        self.transport_override = Some(transport);
        self
    }

    /// Overrides the retry backoff schedule (attempt count is fixed at 3).
    pub fn with_base_backoff(mut self, base: Duration) -> Self {
        self.retry.base_backoff = base;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn provider(&self, name: &str) -> Result<&ProviderConfig, GatewayError> {
        self.providers
            .get(name)
            .ok_or_else(|| GatewayError::UnknownProvider(name.to_string()))
    }

    /// Convenience: the configured model name for a provider.
    pub fn model_for(&self, provider: &str) -> Result<String, GatewayError> {
        Ok(self.provider(provider)?.model.clone())
    }

    /// Executes one request according to the gateway mode. Requests are
    /// canonicalized before keying, so byte-cosmetic prompt differences
    /// (CRLF vs LF, trailing spaces) hit the same cassette entry.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let provider = self.provider(&request.provider)?.clone();
        let canonical = request.canonicalized();
        let key = request_key(&canonical);

        match self.mode {
            Mode::Replay => match self.cassette_lookup(&request.provider, &key)? {
                Some(entry) => Ok(replayed_response(&key, entry)),
                None => Err(GatewayError::CassetteMiss {
                    provider: request.provider.clone(),
                    key,
                }),
            },
            Mode::Record => {
                if let Some(entry) = self.cassette_lookup(&request.provider, &key)? {
                    return Ok(replayed_response(&key, entry));
                }
                let (text, latency_ms) = self.call_live(&provider, &canonical)?;
                let recorded_at = util::now_rfc3339();
                let entry = CassetteEntry {
                    request_key: key.clone(),
                    request_snapshot: canonical,
                    response_text: text.clone(),
                    recorded_at: recorded_at.clone(),
                };
                self.cassette_append(&request.provider, entry)?;
                Ok(ChatResponse {
                    text,
                    request_key: key,
                    latency_ms,
                    source: Source::Live,
                    timestamp: recorded_at,
                })
            }
            Mode::Live => {
                let (text, latency_ms) = self.call_live(&provider, &canonical)?;
                Ok(ChatResponse {
                    text,
                    request_key: key,
                    latency_ms,
                    source: Source::Live,
                    timestamp: util::now_rfc3339(),
                })
            }
        }
    }

    fn transport_for(&self, provider: &ProviderConfig) -> &dyn Transport {
        if let Some(t) = &self.transport_override {
            return t.as_ref();
        }
        match provider.transport {
            TransportKind::Http => &self.http,
            TransportKind::Stub => &self.stub,
        }
    }

    fn call_live(
        &self,
        provider: &ProviderConfig,
        request: &ChatRequest,
    ) -> Result<(String, u64), GatewayError> {
        self.wait_for_slot(&request.provider, provider.requests_per_minute);
        let transport = self.transport_for(provider);

        let mut attempts = 0u32;
        let mut last_error: Option<TransportError> = None;
        while attempts < self.retry.max_attempts {
            if attempts > 0 {
                let backoff = self.retry.base_backoff * self.retry.factor.pow(attempts - 1);
                self.sleeper.sleep(backoff);
            }
            attempts += 1;
            let start = Instant::now();
            match transport.execute(provider, request) {
                Ok(text) => return Ok((text, start.elapsed().as_millis() as u64)),
                Err(err) => {
                    log::warn!(
                        "provider {} attempt {attempts}/{} failed: {}",
                        request.provider,
                        self.retry.max_attempts,
                        err.message
                    );
                    let retryable = err.retryable;
                    last_error = Some(err);
                    if !retryable {
                        break;
                    }
                }
            }
        }

        let err = last_error.expect("loop ran at least once");
        if err.timeout {
            Err(GatewayError::Timeout(err.message))
        } else {
            Err(GatewayError::Provider { attempts, cause: err.message })
        }
    }

    fn wait_for_slot(&self, provider_name: &str, requests_per_minute: u32) {
        loop {
            let wait = {
                let mut limiters = self.limiters.lock().expect("limiter lock");
                let bucket = limiters
                    .entry(provider_name.to_string())
                    .or_insert_with(|| TokenBucket::new(requests_per_minute));
                bucket.try_take(Instant::now())
            };
            match wait {
                None => return,
                Some(duration) => self.sleeper.sleep(duration),
            }
        }
    }

    fn cassette_path(&self, provider: &str) -> PathBuf {
        self.cassette_dir.join(format!("{provider}.jsonl"))
    }

    fn cassette_lookup(
        &self,
        provider: &str,
        key: &str,
    ) -> Result<Option<CassetteEntry>, GatewayError> {
        let mut cassettes = self.cassettes.lock().expect("cassette lock");
        if !cassettes.contains_key(provider) {
            let cassette = Cassette::load(&self.cassette_path(provider))?;
            cassettes.insert(provider.to_string(), cassette);
        }
        Ok(cassettes.get(provider).and_then(|c| c.get(key)).cloned())
    }

    fn cassette_append(&self, provider: &str, entry: CassetteEntry) -> Result<(), GatewayError> {
        let mut cassettes = self.cassettes.lock().expect("cassette lock");
        if !cassettes.contains_key(provider) {
            let cassette = Cassette::load(&self.cassette_path(provider))?;
            cassettes.insert(provider.to_string(), cassette);
        }
        let cassette = cassettes.get_mut(provider).expect("just inserted");
        cassette.append(entry)?;
        Ok(())
    }
}

fn replayed_response(key: &str, entry: CassetteEntry) -> ChatResponse {
    ChatResponse {
        text: entry.response_text,
        request_key: key.to_string(),
        latency_ms: 0,
        source: Source::Replay,
        timestamp: entry.recorded_at,
    }
}
