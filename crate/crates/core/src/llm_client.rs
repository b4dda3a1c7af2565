//! Chat-completion transport: an HTTP provider speaking the common
//! chat-completions JSON schema, a deterministic mock, a content-addressed reply
//! cache, and a client that adds caching, rate limiting and a concurrency bound.

use std::collections::VecDeque;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ENV_API_KEY: &str = "CARE_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "CARE_LLM_BASE_URL";
pub const ENV_MODEL: &str = "CARE_LLM_MODEL";

/// User turn sent after the single system message carrying the whole prompt.
pub const USER_NUDGE: &str = "Respond now.";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: String },
    #[error("malformed provider payload: {0}")]
    MalformedPayload(String),
    #[error("missing credential: set {ENV_API_KEY}")]
    MissingCredential,
    #[error("transport: {0}")]
    Transport(String),
    #[error("cache: {0}")]
    Cache(#[from] io::Error),
    #[error("mock script: {0}")]
    MockScript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LLMRequest {
    pub model_name: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl LLMRequest {
    /// System message with the prompt, then the fixed user nudge.
    pub fn from_prompt(model_name: &str, prompt: &str) -> Self {
        Self {
            model_name: model_name.to_string(),
            messages: vec![
                Message { role: Role::System, content: prompt.to_string() },
                Message { role: Role::User, content: USER_NUDGE.to_string() },
            ],
            temperature: 0.0,
            max_tokens: 1024,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!("temperature {} is negative", self.temperature)));
        }
        Ok(())
    }

    /// The prompt the mock reacts to: the first system message, else the last message.
    fn prompt_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .or(self.messages.last())
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LLMResponse {
    pub text: String,
    pub provider: String,
    pub latency: Duration,
    pub from_cache: bool,
}

/// SHA-256 over canonical JSON of `{messages, model, temperature}` (keys sorted).
pub fn request_hash(request: &LLMRequest) -> String {
    let canonical = serde_json::json!({
        "messages": request.messages,
        "model": request.model_name,
        "temperature": request.temperature,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &LLMRequest) -> Result<String, LlmError>;
    /// True when replies depend on call order, so callers must not reorder requests.
    fn order_dependent(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    Fixed,
    EchoCandidates,
    ReverseCandidates,
    Scripted,
}

impl std::str::FromStr for MockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "echo_candidates" => Ok(Self::EchoCandidates),
            "reverse_candidates" => Ok(Self::ReverseCandidates),
            "scripted" => Ok(Self::Scripted),
            other => Err(format!("unknown mock mode `{other}` (fixed, echo_candidates, reverse_candidates, scripted)")),
        }
    }
}

impl MockMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::EchoCandidates => "echo_candidates",
            Self::ReverseCandidates => "reverse_candidates",
            Self::Scripted => "scripted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub mode: MockMode,
    /// `fixed` replies with the first entry (or nothing); `scripted` cycles through all.
    #[serde(default)]
    pub scripted_replies: Vec<String>,
}

impl MockScript {
    pub fn new(mode: MockMode) -> Self {
        Self { mode, scripted_replies: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.mode == MockMode::Scripted && self.scripted_replies.is_empty() {
            return Err(LlmError::MockScript("scripted mode needs at least one reply".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct MockProvider {
    script: MockScript,
    name: String,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Result<Self, LlmError> {
        script.validate()?;
        let name = format!("mock:{}", script.mode.as_str());
        Ok(Self { script, name, calls: AtomicUsize::new(0) })
    }
}

fn numbered_title(line: &str) -> Option<&str> {
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    line[digits..].strip_prefix(". ")
}

/// Titles of the numbered block that ends the prompt.
pub fn trailing_numbered_block(prompt: &str) -> Vec<&str> {
    let mut titles: Vec<&str> = prompt.trim_end().lines().rev().map_while(numbered_title).collect();
    titles.reverse();
    titles
}

fn numbered(titles: impl Iterator<Item = impl AsRef<str>>) -> String {
    titles.enumerate().map(|(i, t)| format!("{}. {}", i + 1, t.as_ref())).collect::<Vec<_>>().join("\n")
}

impl ChatProvider for MockProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, request: &LLMRequest) -> Result<String, LlmError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        let replies = &self.script.scripted_replies;
        Ok(match self.script.mode {
            MockMode::Fixed => replies.first().cloned().unwrap_or_default(),
            MockMode::Scripted => replies[call % replies.len()].clone(),
            MockMode::EchoCandidates => numbered(trailing_numbered_block(request.prompt_text()).into_iter()),
            MockMode::ReverseCandidates => numbered(trailing_numbered_block(request.prompt_text()).into_iter().rev()),
        })
    }

    fn order_dependent(&self) -> bool {
        self.script.mode == MockMode::Scripted
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Io(String),
}

/// One HTTP POST: returns the status and body.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, api_key: &str, body: &str, timeout: Duration) -> Result<(u16, String), TransportError>;
}

#[derive(Debug, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post(&self, url: &str, api_key: &str, body: &str, timeout: Duration) -> Result<(u16, String), TransportError> {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        let result = agent
            .post(url)
            .header("Authorization", &format!("Bearer {api_key}"))
            .header("Content-Type", "application/json")
            .send(body);
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Io(other.to_string()),
        };
        let mut response = result.map_err(map_err)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_err)?;
        Ok((status, text))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

pub const MAX_ATTEMPTS: usize = 5;
pub const BACKOFF_BASE: Duration = Duration::from_secs(1);

pub struct HttpProvider {
    base_url: String,
    api_key: String,
    transport: Arc<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
}

impl HttpProvider {
    pub fn new(base_url: &str, api_key: Option<&str>) -> Result<Self, LlmError> {
        Self::with_transport(base_url, api_key, Arc::new(UreqTransport), Arc::new(ThreadSleeper))
    }

    pub fn with_transport(
        base_url: &str,
        api_key: Option<&str>,
        transport: Arc<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Result<Self, LlmError> {
        let api_key = api_key.filter(|k| !k.is_empty()).ok_or(LlmError::MissingCredential)?;
        Ok(Self { base_url: base_url.trim_end_matches('/').to_string(), api_key: api_key.to_string(), transport, sleeper })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

/// Extracts `choices[0].message.content`.
pub fn parse_completion(body: &str) -> Result<String, LlmError> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedPayload(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| LlmError::MalformedPayload("no choices[0].message.content".into()))
}

impl ChatProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn send(&self, request: &LLMRequest) -> Result<String, LlmError> {
        let body = serde_json::to_string(&WireRequest {
            model: &request.model_name,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        })
        .map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
        let url = self.endpoint();
        let mut last = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                self.sleeper.sleep(BACKOFF_BASE * (1 << (attempt - 1)));
            }
            match self.transport.post(&url, &self.api_key, &body, request.timeout) {
                Ok((status, text)) if (200..300).contains(&status) => return parse_completion(&text),
                Ok((status, text)) if status == 429 || status >= 500 => last = format!("HTTP {status}: {text}"),
                Ok((status, text)) => return Err(LlmError::Http { status, body: text }),
                Err(TransportError::Timeout) => last = "timeout".into(),
                Err(TransportError::Io(e)) => last = e,
            }
        }
        Err(LlmError::RetriesExhausted { attempts: MAX_ATTEMPTS, last })
    }
}

fn cache_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(&hash[..2.min(hash.len())]).join(format!("{hash}.txt"))
}

pub fn cache_lookup(dir: &Path, hash: &str) -> Result<Option<String>, LlmError> {
    match fs::read_to_string(cache_path(dir, hash)) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Writes to a temp file and renames it into place without clobbering, so
/// readers see either nothing or a complete entry. The first writer wins.
pub fn cache_store(dir: &Path, hash: &str, text: &str) -> Result<(), LlmError> {
    let path = cache_path(dir, hash);
    let parent = path.parent().expect("cache entries live in a shard directory");
    fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(text.as_bytes())?;
    tmp.flush()?;
    match tmp.persist_noclobber(&path) {
        Ok(_) => Ok(()),
        Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => Ok(()),
        Err(e) => Err(e.error.into()),
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Sliding window: a dispatch waits until fewer than `per_second` dispatches
/// happened in the preceding second.
pub struct RateLimiter {
    per_second: usize,
    clock: Arc<dyn Clock>,
    recent: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_second: usize, clock: Arc<dyn Clock>) -> Self {
        Self { per_second: per_second.max(1), clock, recent: Mutex::new(VecDeque::new()) }
    }

    pub fn acquire(&self) {
        let mut recent = self.recent.lock().unwrap();
        let window = Duration::from_secs(1);
        loop {
            let now = self.clock.now();
            while recent.front().is_some_and(|&t| now.saturating_sub(t) >= window) {
                recent.pop_front();
            }
            if recent.len() < self.per_second {
                recent.push_back(now);
                return;
            }
            let wait = window - now.saturating_sub(recent[0]);
            self.clock.sleep(wait);
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cond: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cond.wait(free).unwrap();
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

pub const DEFAULT_CONCURRENCY: usize = 4;

/// Thread-safe front end over a provider.
pub struct LlmClient {
    provider: Arc<dyn ChatProvider>,
    cache_dir: Option<PathBuf>,
    limiter: Option<RateLimiter>,
    slots: Semaphore,
    concurrency: usize,
    dispatches: AtomicUsize,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            cache_dir: None,
            limiter: None,
            slots: Semaphore::new(DEFAULT_CONCURRENCY),
            concurrency: DEFAULT_CONCURRENCY,
            dispatches: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn with_rate_limit(mut self, per_second: usize, clock: Arc<dyn Clock>) -> Self {
        self.limiter = Some(RateLimiter::new(per_second, clock));
        self
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.slots = Semaphore::new(n);
        self.concurrency = n.max(1);
        self
    }

    /// Parallelism callers may use without changing results.
    pub fn effective_concurrency(&self) -> usize {
        if self.provider.order_dependent() {
            1
        } else {
            self.concurrency
        }
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Requests that reached the provider (cache hits excluded).
    pub fn dispatch_count(&self) -> usize {
        self.dispatches.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &LLMRequest) -> Result<LLMResponse, LlmError> {
        request.validate()?;
        let started = Instant::now();
        let hash = self.cache_dir.as_ref().map(|_| request_hash(request));
        if let (Some(dir), Some(hash)) = (&self.cache_dir, &hash) {
            if let Some(text) = cache_lookup(dir, hash)? {
                return Ok(LLMResponse {
                    text,
                    provider: self.provider.name().to_string(),
                    latency: started.elapsed(),
                    from_cache: true,
                });
            }
        }
        let text = {
            let _slot = self.slots.acquire();
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            self.dispatches.fetch_add(1, Ordering::SeqCst);
            self.provider.send(request)?
        };
        if let (Some(dir), Some(hash)) = (&self.cache_dir, &hash) {
            cache_store(dir, hash, &text)?;
        }
        Ok(LLMResponse { text, provider: self.provider.name().to_string(), latency: started.elapsed(), from_cache: false })
    }
}

/// Endpoint settings; unset fields fall back to the `CARE_LLM_*` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub concurrency: usize,
    pub rate_limit: Option<usize>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            api_key: None,
            model: None,
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 60,
            concurrency: DEFAULT_CONCURRENCY,
            rate_limit: None,
        }
    }
}

impl ProviderConfig {
    /// Overrides fields with any non-empty `CARE_LLM_*` variables.
    pub fn apply_env(mut self) -> Self {
        let var = |k| std::env::var(k).ok().filter(|v: &String| !v.is_empty());
        if let Some(v) = var(ENV_API_KEY) {
            self.api_key = Some(v);
        }
        if let Some(v) = var(ENV_BASE_URL) {
            self.base_url = Some(v);
        }
        if let Some(v) = var(ENV_MODEL) {
            self.model = Some(v);
        }
        self
    }

    pub fn request(&self, model_name: &str, prompt: &str) -> LLMRequest {
        let mut req = LLMRequest::from_prompt(model_name, prompt);
        req.temperature = self.temperature;
        req.max_tokens = self.max_tokens;
        req.timeout = Duration::from_secs(self.timeout_secs);
        req
    }
}
