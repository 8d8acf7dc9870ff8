//! Chat-completion transport shared by all LLM players.
//!
//! A [`Gateway`] wraps one provider [`Transport`] with retries (exponential
//! backoff, seeded jitter), an in-flight request limit and an optional
//! [`Cassette`] that records or replays responses by request fingerprint.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub max_output_tokens: Option<u32>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => Err(GatewayError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::System => Err(GatewayError::InvalidRequest(
                "first message must be the system prompt".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 over model, temperature, seed and messages in a fixed
    /// serialization. Output token limits are not part of the fingerprint.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            model_id: &'a str,
            temperature: Option<f64>,
            seed: Option<u64>,
            messages: &'a [ChatMessage],
        }
        let canonical = serde_json::to_vec(&Canonical {
            model_id: &self.model_id,
            temperature: self.temperature,
            seed: self.seed,
            messages: &self.messages,
        })
        .expect("request serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub provider_metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl TransportError {
    fn class(&self) -> ErrorClass {
        match self {
            Self::Timeout(_) | Self::Network(_) => ErrorClass::Retryable,
            Self::Malformed(_) => ErrorClass::Fatal,
            Self::Status { code, body } => match *code {
                401 | 403 => ErrorClass::Auth,
                413 => ErrorClass::ContextTooLong,
                400 if mentions_context_limit(body) => ErrorClass::ContextTooLong,
                429 | 500..=599 => ErrorClass::Retryable,
                _ => ErrorClass::Fatal,
            },
        }
    }
}

fn mentions_context_limit(body: &str) -> bool {
    let b = body.to_ascii_lowercase();
    b.contains("context_length") || b.contains("context length") || b.contains("maximum context")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ErrorClass {
    Retryable,
    Auth,
    ContextTooLong,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempts: {last_error}")]
    TransportExhausted { attempts: u32, last_error: TransportError },
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("request exceeds the model context window: {0}")]
    ContextTooLong(String),
    #[error("provider rejected request: {0}")]
    Rejected(TransportError),
    #[error("no cassette entry for request {0}")]
    CassetteMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette I/O: {0}")]
    CassetteIo(String),
    #[error("no transport configured for model `{0}`")]
    NoTransport(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportResponse {
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

/// A provider endpoint. Implementations must be callable from many threads.
pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<TransportResponse, TransportError>;
}

/// Transport answered by a closure. Stands in for a provider in offline runs,
/// e.g. to record a cassette without network access.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&CompletionRequest) -> Result<TransportResponse, TransportError> + Send + Sync,
{
    fn send(&self, request: &CompletionRequest) -> Result<TransportResponse, TransportError> {
        (self.0)(request)
    }
}

impl TransportResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), metadata: BTreeMap::new() }
    }
}

/// Connection details of an OpenAI-style chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub name: String,
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_scheme")]
    pub auth_scheme: String,
    #[serde(default = "yes")]
    pub supports_seed: bool,
    #[serde(default = "yes")]
    pub supports_temperature: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_concurrency")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Model ids served by this provider.
    #[serde(default)]
    pub models: Vec<String>,
}

fn default_path() -> String {
    "/v1/chat/completions".into()
}
fn default_auth_header() -> String {
    "Authorization".into()
}
fn default_auth_scheme() -> String {
    "Bearer".into()
}
fn yes() -> bool {
    true
}
fn default_timeout() -> u64 {
    120
}
fn default_concurrency() -> usize {
    RetryPolicy::DEFAULT_IN_FLIGHT
}
fn default_retries() -> u32 {
    RetryPolicy::DEFAULT_MAX_RETRIES
}

/// Blocking HTTP transport speaking the common `chat/completions` JSON format.
pub struct HttpTransport {
    config: ProviderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(config: ProviderConfig) -> Result<Self, GatewayError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::AuthFailure(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Ok(Self { config, api_key, agent })
    }

    /// Wire payload. Seed and temperature are dropped for providers that do not
    /// accept them.
    pub fn payload(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": request.model_id,
            "messages": request.messages,
        });
        if let (Some(t), true) = (request.temperature, self.config.supports_temperature) {
            body["temperature"] = t.into();
        }
        if let (Some(s), true) = (request.seed, self.config.supports_seed) {
            body["seed"] = s.into();
        }
        if let Some(m) = request.max_output_tokens {
            body["max_tokens"] = m.into();
        }
        body
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest) -> Result<TransportResponse, TransportError> {
        let url = format!(
            "{}{}",
            self.config.base_url.trim_end_matches('/'),
            self.config.path
        );
        let mut call = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            let value = if self.config.auth_scheme.is_empty() {
                key.clone()
            } else {
                format!("{} {key}", self.config.auth_scheme)
            };
            call = call.set(&self.config.auth_header, &value);
        }
        let response = match call.send_json(self.payload(request)) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                return Err(TransportError::Status {
                    code,
                    body: r.into_string().unwrap_or_default(),
                })
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                return Err(if msg.to_ascii_lowercase().contains("timed out") {
                    TransportError::Timeout(msg)
                } else {
                    TransportError::Network(msg)
                });
            }
        };
        let body: serde_json::Value = response
            .into_json()
            .map_err(|e| TransportError::Malformed(e.to_string()))?;
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| TransportError::Malformed("missing choices[0].message.content".into()))?
            .to_string();
        let mut metadata = BTreeMap::new();
        metadata.insert("provider".into(), self.config.name.clone());
        for key in ["prompt_tokens", "completion_tokens", "total_tokens"] {
            if let Some(n) = body["usage"][key].as_u64() {
                metadata.insert(key.into(), n.to_string());
            }
        }
        if request.seed.is_some() && !self.config.supports_seed {
            tracing::debug!(provider = %self.config.name, "seed omitted");
            metadata.insert("seed_omitted".into(), "true".into());
        }
        if request.temperature.is_some() && !self.config.supports_temperature {
            tracing::debug!(provider = %self.config.name, "temperature omitted");
            metadata.insert("temperature_omitted".into(), "true".into());
        }
        Ok(TransportResponse { text, metadata })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter_seed: u64,
}

impl RetryPolicy {
    pub const DEFAULT_MAX_RETRIES: u32 = 5;
    pub const DEFAULT_IN_FLIGHT: usize = 4;

    /// Delay before retry number `retry` (1-based): half of the capped
    /// exponential step plus a uniform draw over the other half.
    pub fn delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << (retry.saturating_sub(1)).min(32))
            .min(self.max_delay_ms);
        let half = exp / 2;
        Duration::from_millis(half + rng.gen_range(0..=exp - half))
    }

    /// Full delay schedule for a fresh jitter source.
    pub fn schedule(&self) -> Vec<Duration> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.jitter_seed);
        (1..=self.max_retries).map(|r| self.delay(r, &mut rng)).collect()
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: Self::DEFAULT_MAX_RETRIES,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter_seed: 0,
        }
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Counting semaphore bounding in-flight requests.
pub struct InFlightLimiter {
    limit: usize,
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            state: Mutex::new((0, 0)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap();
        while st.0 >= self.limit {
            st = self.freed.wait(st).unwrap();
        }
        st.0 += 1;
        st.1 = st.1.max(st.0);
        Permit(self)
    }

    /// Highest number of simultaneously held permits so far.
    pub fn peak(&self) -> usize {
        self.state.lock().unwrap().1
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.0.state.lock().unwrap();
        st.0 -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    #[default]
    Off,
    Record,
    Replay,
}

impl std::str::FromStr for CassetteMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(Self::Off),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            other => Err(format!("unknown cassette mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub model_id: String,
    pub response: String,
}

/// Fingerprint → response store backed by a JSON-lines file.
pub struct Cassette {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl Cassette {
    /// In-memory cassette, mostly for tests.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(BTreeMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads `path` for playback. A missing file yields an empty cassette, so
    /// every lookup misses.
    pub fn open_replay(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let mut entries = BTreeMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| GatewayError::CassetteIo(e.to_string()))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| GatewayError::CassetteIo(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
                    GatewayError::CassetteIo(format!("{}:{}: {e}", path.display(), i + 1))
                })?;
                entries.insert(entry.fingerprint, entry.response);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            writer: Mutex::new(None),
        })
    }

    /// Opens `path` for appending new recordings.
    pub fn open_record(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let mut cassette = Self::open_replay(path)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| GatewayError::CassetteIo(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::CassetteIo(e.to_string()))?;
        cassette.writer = Mutex::new(Some(file));
        Ok(cassette)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn lookup(&self, fingerprint: &str) -> Option<String> {
        self.entries.lock().unwrap().get(fingerprint).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn record(&self, request: &CompletionRequest, response: &str) -> Result<(), GatewayError> {
        let fingerprint = request.fingerprint();
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&fingerprint) {
            return Ok(());
        }
        if let Some(file) = self.writer.lock().unwrap().as_mut() {
            let entry = CassetteEntry {
                fingerprint: fingerprint.clone(),
                model_id: request.model_id.clone(),
                response: response.to_string(),
            };
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| GatewayError::CassetteIo(e.to_string()))?;
        }
        entries.insert(fingerprint, response.to_string());
        Ok(())
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        self.entries.lock().unwrap().clone()
    }
}

/// Retrying, rate-limited front for one provider, optionally behind a cassette.
pub struct Gateway {
    transport: Option<Arc<dyn Transport>>,
    cassette: Option<(CassetteMode, Arc<Cassette>)>,
    retry: RetryPolicy,
    limiter: InFlightLimiter,
    jitter: Mutex<ChaCha8Rng>,
    sleeper: Arc<dyn Sleeper>,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        let retry = RetryPolicy::default();
        Self {
            transport: Some(transport),
            cassette: None,
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(retry.jitter_seed)),
            retry,
            limiter: InFlightLimiter::new(RetryPolicy::DEFAULT_IN_FLIGHT),
            sleeper: Arc::new(ThreadSleeper),
        }
    }

    /// Gateway serving only from `cassette`; every miss is an error.
    pub fn replay_only(cassette: Arc<Cassette>) -> Self {
        let retry = RetryPolicy::default();
        Self {
            transport: None,
            cassette: Some((CassetteMode::Replay, cassette)),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(retry.jitter_seed)),
            retry,
            limiter: InFlightLimiter::new(RetryPolicy::DEFAULT_IN_FLIGHT),
            sleeper: Arc::new(ThreadSleeper),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.jitter = Mutex::new(ChaCha8Rng::seed_from_u64(retry.jitter_seed));
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.limiter = InFlightLimiter::new(limit);
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_cassette(mut self, mode: CassetteMode, cassette: Arc<Cassette>) -> Self {
        self.cassette = match mode {
            CassetteMode::Off => None,
            m => Some((m, cassette)),
        };
        self
    }

    pub fn peak_in_flight(&self) -> usize {
        self.limiter.peak()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let started = Instant::now();
        if let Some((CassetteMode::Replay, cassette)) = &self.cassette {
            let fp = request.fingerprint();
            let text = cassette.lookup(&fp).ok_or(GatewayError::CassetteMiss(fp))?;
            let mut provider_metadata = BTreeMap::new();
            provider_metadata.insert("source".into(), "cassette".into());
            return Ok(CompletionResult {
                text,
                latency_ms: started.elapsed().as_millis() as u64,
                attempt_count: 1,
                provider_metadata,
            });
        }
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| GatewayError::NoTransport(request.model_id.clone()))?;
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            match transport.send(request) {
                Ok(resp) => {
                    if let Some((CassetteMode::Record, cassette)) = &self.cassette {
                        cassette.record(request, &resp.text)?;
                    }
                    return Ok(CompletionResult {
                        text: resp.text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                        provider_metadata: resp.metadata,
                    });
                }
                Err(err) => match err.class() {
                    ErrorClass::Auth => return Err(GatewayError::AuthFailure(err.to_string())),
                    ErrorClass::ContextTooLong => {
                        return Err(GatewayError::ContextTooLong(err.to_string()))
                    }
                    ErrorClass::Fatal => return Err(GatewayError::Rejected(err)),
                    ErrorClass::Retryable if attempt > self.retry.max_retries => {
                        return Err(GatewayError::TransportExhausted {
                            attempts: attempt,
                            last_error: err,
                        })
                    }
                    ErrorClass::Retryable => {
                        let delay = {
                            let mut rng = self.jitter.lock().unwrap();
                            self.retry.delay(attempt, &mut *rng)
                        };
                        tracing::warn!(attempt, ?delay, error = %err, "retrying completion");
                        self.sleeper.sleep(delay);
                    }
                },
            }
        }
    }
}

/// Gateways keyed by model id.
#[derive(Default, Clone)]
pub struct GatewayRegistry {
    by_model: BTreeMap<String, Arc<Gateway>>,
    fallback: Option<Arc<Gateway>>,
}

impl GatewayRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model_id: impl Into<String>, gateway: Arc<Gateway>) {
        self.by_model.insert(model_id.into(), gateway);
    }

    /// Gateway used for models without a dedicated entry.
    pub fn set_fallback(&mut self, gateway: Arc<Gateway>) {
        self.fallback = Some(gateway);
    }

    pub fn get(&self, model_id: &str) -> Result<Arc<Gateway>, GatewayError> {
        self.by_model
            .get(model_id)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| GatewayError::NoTransport(model_id.to_string()))
    }
}
