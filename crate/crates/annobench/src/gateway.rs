//! Uniform chat-completion client: one HTTP wire shape for every provider,
//! plus a record/replay store so benchmark runs are reproducible offline.
//!
//! Requests are canonicalized (JSON with sorted keys, no timestamps) and
//! keyed by their SHA-256 digest. In replay mode a completion is a pure
//! lookup; in record mode a hit short-circuits the network and a miss is
//! fetched then persisted.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::ChatMessage;

/// Sampling controls passed through to the provider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.6,
            top_p: 0.9,
            top_k: 50,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    /// Seed for the ±20% backoff jitter, fixed so tests are deterministic.
    pub jitter_seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff_ms: 250,
            jitter_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; empty means no auth.
    #[serde(default)]
    pub auth_env: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_in_flight")]
    pub in_flight_limit: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.retry.max_attempts < 1 {
            return Err(GatewayError::Config(format!(
                "provider '{}': max_attempts must be >= 1",
                self.name
            )));
        }
        if self.in_flight_limit < 1 {
            return Err(GatewayError::Config(format!(
                "provider '{}': in_flight_limit must be >= 1",
                self.name
            )));
        }
        Ok(())
    }
}

/// The wire-shaped request body: `messages` plus sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: &str, messages: &[ChatMessage], params: &SamplingParams) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: messages.to_vec(),
            temperature: params.temperature,
            top_p: params.top_p,
            top_k: params.top_k,
            max_tokens: params.max_tokens,
        }
    }
}

/// Canonical JSON: object keys sorted recursively, no whitespace.
///
/// serde_json's default map keeps keys ordered, so serializing through
/// `Value` yields a canonical byte string regardless of how the value was
/// assembled. Requests carry no timestamps by construction.
pub fn canonical_json(value: &serde_json::Value) -> String {
    serde_json::to_string(value).expect("serializing a Value cannot fail")
}

/// SHA-256 hex digest of the canonicalized request.
pub fn request_digest(request: &ChatRequest) -> String {
    let value = serde_json::to_value(request).expect("request serializes");
    let canonical = canonical_json(&value);
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("replay store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("replay store {path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("digest collision on {digest}: differing request payloads")]
    Collision { digest: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreLine {
    digest: String,
    request: serde_json::Value,
    response: String,
}

struct StoredEntry {
    canonical_request: String,
    response: String,
}

/// On-disk map from request digest to recorded response text (JSON lines).
pub struct ReplayStore {
    path: PathBuf,
    entries: HashMap<String, StoredEntry>,
}

impl ReplayStore {
    /// Open a store, loading existing entries when the file exists.
    /// Later lines win when a digest repeats.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut entries = HashMap::new();
        if path.is_file() {
            let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: StoreLine =
                    serde_json::from_str(line).map_err(|e| StoreError::Malformed {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: e.to_string(),
                    })?;
                entries.insert(
                    parsed.digest,
                    StoredEntry {
                        canonical_request: canonical_json(&parsed.request),
                        response: parsed.response,
                    },
                );
            }
        }
        Ok(ReplayStore {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Record a request/response pair; re-recording the same pair is a no-op
    /// and a changed response for the same request overwrites it.
    pub fn record(&mut self, request: &ChatRequest, response: &str) -> Result<(), StoreError> {
        let value = serde_json::to_value(request).expect("request serializes");
        let canonical = canonical_json(&value);
        let digest = hex::encode(Sha256::digest(canonical.as_bytes()));
        if let Some(existing) = self.entries.get(&digest) {
            if existing.canonical_request != canonical {
                return Err(StoreError::Collision { digest });
            }
            if existing.response == response {
                return Ok(());
            }
        }
        let line = serde_json::to_string(&StoreLine {
            digest: digest.clone(),
            request: value,
            response: response.to_string(),
        })
        .expect("store line serializes");
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|source| StoreError::Io {
                    path: self.path.clone(),
                    source,
                })?;
            }
        }
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|source| StoreError::Io {
                path: self.path.clone(),
                source,
            })?;
        writeln!(f, "{line}").map_err(|source| StoreError::Io {
            path: self.path.clone(),
            source,
        })?;
        self.entries.insert(
            digest,
            StoredEntry {
                canonical_request: canonical,
                response: response.to_string(),
            },
        );
        Ok(())
    }

    pub fn lookup(&self, request: &ChatRequest) -> Option<&str> {
        self.lookup_digest(&request_digest(request))
    }

    pub fn lookup_digest(&self, digest: &str) -> Option<&str> {
        self.entries.get(digest).map(|e| e.response.as_str())
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("auth env var '{0}' is not set")]
    AuthMissing(String),
    #[error("HTTP {status}: {body}")]
    Status {
        status: u16,
        body: String,
        retryable: bool,
    },
    #[error("network: {0}")]
    Network(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Status { retryable, .. } => *retryable,
            TransportError::Network(_) => true,
            TransportError::AuthMissing(_) | TransportError::Malformed(_) => false,
        }
    }
}

/// One attempt at delivering a request; the gateway owns retries.
pub trait Transport: Send + Sync {
    fn send(&self, cfg: &ProviderConfig, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

/// Blocking HTTP transport speaking the `{endpoint}/chat/completions` shape.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        HttpTransport {
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for HttpTransport {
    fn send(&self, cfg: &ProviderConfig, request: &ChatRequest) -> Result<String, TransportError> {
        let url = format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/'));
        let mut builder = self
            .client
            .post(&url)
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .json(request);
        if !cfg.auth_env.is_empty() {
            let token = std::env::var(&cfg.auth_env)
                .map_err(|_| TransportError::AuthMissing(cfg.auth_env.clone()))?;
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| {
            TransportError::Network(if e.is_timeout() {
                format!("timeout after {}ms", cfg.timeout_ms)
            } else {
                e.to_string()
            })
        })?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: truncate(&body, 300),
                retryable: status.as_u16() == 429 || status.is_server_error(),
            });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&body).map_err(|e| TransportError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::Malformed("no choices in response".to_string()))
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("auth env var '{0}' is not set")]
    AuthMissing(String),
    #[error("non-retryable provider error (HTTP {status}): {body}")]
    NonRetryable { status: u16, body: String },
    #[error("provider response malformed: {0}")]
    Malformed(String),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    AttemptsExhausted { attempts: u32, last: String },
    #[error("no recorded response for request digest {digest}")]
    ReplayMiss { digest: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    Live,
    Record,
    Replay,
}

/// Counting gate bounding concurrent in-flight requests.
struct InFlightGate {
    max: usize,
    state: Mutex<usize>,
    cv: Condvar,
}

impl InFlightGate {
    fn new(max: usize) -> Self {
        InFlightGate {
            max,
            state: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.state.lock().unwrap();
        while *n >= self.max {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a InFlightGate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.gate.state.lock().unwrap();
        *n -= 1;
        self.gate.cv.notify_one();
    }
}

/// Shareable completion client enforcing retries, the in-flight bound, and
/// the record/replay discipline.
pub struct Gateway {
    cfg: ProviderConfig,
    mode: ReplayMode,
    store: Option<Mutex<ReplayStore>>,
    transport: Box<dyn Transport>,
    gate: InFlightGate,
    jitter: Mutex<ChaCha8Rng>,
    calls: AtomicU64,
    attempts: AtomicU64,
}

impl Gateway {
    pub fn new(
        cfg: ProviderConfig,
        mode: ReplayMode,
        store: Option<ReplayStore>,
        transport: Box<dyn Transport>,
    ) -> Result<Self, GatewayError> {
        cfg.validate()?;
        if matches!(mode, ReplayMode::Replay | ReplayMode::Record) && store.is_none() {
            return Err(GatewayError::Config(format!(
                "provider '{}': {mode:?} mode needs a replay store",
                cfg.name
            )));
        }
        let gate = InFlightGate::new(cfg.in_flight_limit);
        let jitter = Mutex::new(ChaCha8Rng::seed_from_u64(cfg.retry.jitter_seed));
        Ok(Gateway {
            cfg,
            mode,
            store: store.map(Mutex::new),
            transport,
            gate,
            jitter,
            calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        })
    }

    /// Live HTTP gateway.
    pub fn http(
        cfg: ProviderConfig,
        mode: ReplayMode,
        store: Option<ReplayStore>,
    ) -> Result<Self, GatewayError> {
        Gateway::new(cfg, mode, store, Box::new(HttpTransport::new()))
    }

    pub fn provider_name(&self) -> &str {
        &self.cfg.name
    }

    pub fn model(&self) -> &str {
        &self.cfg.model
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    /// Completed completions (any mode).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Transport attempts, including retried ones.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    /// Resolve a chat exchange to the assistant text.
    pub fn complete(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<String, GatewayError> {
        let request = ChatRequest::new(&self.cfg.model, messages, params);
        let digest = request_digest(&request);
        match self.mode {
            ReplayMode::Replay => {
                let store = self.store.as_ref().unwrap().lock().unwrap();
                match store.lookup_digest(&digest) {
                    Some(text) => {
                        let text = text.to_string();
                        drop(store);
                        self.calls.fetch_add(1, Ordering::SeqCst);
                        Ok(text)
                    }
                    None => Err(GatewayError::ReplayMiss { digest }),
                }
            }
            ReplayMode::Record => {
                {
                    let store = self.store.as_ref().unwrap().lock().unwrap();
                    if let Some(text) = store.lookup_digest(&digest) {
                        let text = text.to_string();
                        drop(store);
                        self.calls.fetch_add(1, Ordering::SeqCst);
                        return Ok(text);
                    }
                }
                let text = self.send_with_retry(&request)?;
                self.store
                    .as_ref()
                    .unwrap()
                    .lock()
                    .unwrap()
                    .record(&request, &text)?;
                self.calls.fetch_add(1, Ordering::SeqCst);
                Ok(text)
            }
            ReplayMode::Live => {
                let text = self.send_with_retry(&request)?;
                self.calls.fetch_add(1, Ordering::SeqCst);
                Ok(text)
            }
        }
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let _permit = self.gate.acquire();
        let max = self.cfg.retry.max_attempts;
        let mut last_err = String::new();
        for attempt in 1..=max {
            self.attempts.fetch_add(1, Ordering::SeqCst);
            match self.transport.send(&self.cfg, request) {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable() => {
                    last_err = e.to_string();
                    if attempt < max {
                        let backoff = self.backoff_with_jitter(attempt);
                        log::warn!(
                            "provider '{}' attempt {attempt}/{max} failed ({last_err}); \
                             retrying in {backoff:?}",
                            self.cfg.name
                        );
                        std::thread::sleep(backoff);
                    }
                }
                Err(TransportError::AuthMissing(var)) => {
                    return Err(GatewayError::AuthMissing(var))
                }
                Err(TransportError::Status { status, body, .. }) => {
                    return Err(GatewayError::NonRetryable { status, body })
                }
                Err(TransportError::Malformed(msg)) => return Err(GatewayError::Malformed(msg)),
                Err(TransportError::Network(msg)) => {
                    // unreachable: Network is retryable
                    last_err = msg;
                }
            }
        }
        Err(GatewayError::AttemptsExhausted {
            attempts: max,
            last: last_err,
        })
    }

    /// base × 2^(attempt-1), jittered ±20%.
    fn backoff_with_jitter(&self, attempt: u32) -> Duration {
        let base = self.cfg.retry.base_backoff_ms as f64 * 2f64.powi(attempt as i32 - 1);
        let factor = self.jitter.lock().unwrap().gen_range(0.8..1.2);
        Duration::from_millis((base * factor).round() as u64)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    /// Deterministic fake provider: replies with a function of the request.
    pub struct EchoTransport;

    impl Transport for EchoTransport {
        fn send(&self, _cfg: &ProviderConfig, request: &ChatRequest) -> Result<String, TransportError> {
            let last = request.messages.last().unwrap();
            Ok(format!(
                "echo:{}:{}",
                &request_digest(request)[..8],
                last.content
            ))
        }
    }

    /// Fails with retryable errors a fixed number of times, then succeeds.
    pub struct FlakyTransport {
        pub failures: AtomicUsize,
    }

    impl Transport for FlakyTransport {
        fn send(&self, _cfg: &ProviderConfig, _request: &ChatRequest) -> Result<String, TransportError> {
            if self
                .failures
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                Err(TransportError::Status {
                    status: 503,
                    body: "busy".to_string(),
                    retryable: true,
                })
            } else {
                Ok("finally".to_string())
            }
        }
    }

    pub fn test_cfg(name: &str) -> ProviderConfig {
        ProviderConfig {
            name: name.to_string(),
            endpoint: "http://localhost:0".to_string(),
            model: "test-model".to_string(),
            auth_env: String::new(),
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff_ms: 1,
                jitter_seed: 7,
            },
            in_flight_limit: 4,
            timeout_ms: 2_000,
        }
    }
}
