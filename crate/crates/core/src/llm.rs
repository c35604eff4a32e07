//! Chat-completion backends: live HTTP, cassette replay, recording, and a
//! scripted fake for tests.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

static NETWORK_REQUESTS: AtomicUsize = AtomicUsize::new(0);

/// HTTP requests issued by live backends in this process.
pub fn network_request_count() -> usize {
    NETWORK_REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no cassette entry for fingerprint {fingerprint}")]
    CassetteMiss { fingerprint: String },
    #[error("environment variable {var} is not set")]
    AuthMissing { var: String },
    #[error("cannot write {}: {message}", path.display())]
    FileWrite { path: PathBuf, message: String },
    #[error("cannot read cassette {}: {message}", path.display())]
    CassetteRead { path: PathBuf, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

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
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub temperature: f64,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 120,
            max_retries: 3,
            temperature: 0.0,
            backoff_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let url = url::Url::parse(&self.endpoint)
            .map_err(|e| LlmError::InvalidConfig(format!("endpoint {:?}: {e}", self.endpoint)))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(LlmError::InvalidConfig(format!(
                "endpoint scheme {} is not http(s)",
                url.scheme()
            )));
        }
        if self.model.is_empty() {
            return Err(LlmError::InvalidConfig("model name is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::InvalidConfig(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }
}

fn check_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    if messages.is_empty() {
        return Err(LlmError::InvalidRequest("conversation has no messages".into()));
    }
    if let Some(m) = messages
        .iter()
        .find(|m| m.role != Role::System && m.content.trim().is_empty())
    {
        return Err(LlmError::InvalidRequest(format!("empty {:?} message", m.role)));
    }
    Ok(())
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

/// SHA-256 over a fixed JSON serialization of model, temperature and the
/// ordered messages.
pub fn fingerprint(messages: &[ChatMessage], config: &ProviderConfig) -> String {
    let input = FingerprintInput {
        model: &config.model,
        temperature: config.temperature,
        messages,
    };
    let bytes = serde_json::to_vec(&input).expect("fingerprint input serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub trait ChatBackend: Send + Sync {
    /// Returns the assistant reply to `messages`.
    fn complete(&self, messages: &[ChatMessage], config: &ProviderConfig) -> Result<ChatMessage, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub model: String,
    pub response: String,
}

/// Recorded responses keyed by fingerprint, kept in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    entries: Vec<CassetteEntry>,
    index: HashMap<String, usize>,
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let read_err = |message: String| LlmError::CassetteRead {
            path: path.to_path_buf(),
            message,
        };
        let file = File::open(path).map_err(|e| read_err(e.to_string()))?;
        let mut cassette = Self::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| read_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry =
                serde_json::from_str(&line).map_err(|e| read_err(format!("line {}: {e}", n + 1)))?;
            if !cassette.insert(entry) {
                return Err(read_err(format!("line {}: duplicate fingerprint", n + 1)));
            }
        }
        Ok(cassette)
    }

    pub fn get(&self, fingerprint: &str) -> Option<&CassetteEntry> {
        self.index.get(fingerprint).map(|&i| &self.entries[i])
    }

    /// Adds an entry unless its fingerprint is already present.
    pub fn insert(&mut self, entry: CassetteEntry) -> bool {
        if self.index.contains_key(&entry.fingerprint) {
            return false;
        }
        self.index.insert(entry.fingerprint.clone(), self.entries.len());
        self.entries.push(entry);
        true
    }

    pub fn entries(&self) -> &[CassetteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| LlmError::FileWrite {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub struct ReplayBackend {
    cassette: Cassette,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> Self {
        Self { cassette }
    }

    pub fn open(path: &Path) -> Result<Self, LlmError> {
        Cassette::load(path).map(Self::new)
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, messages: &[ChatMessage], config: &ProviderConfig) -> Result<ChatMessage, LlmError> {
        check_messages(messages)?;
        let fp = fingerprint(messages, config);
        self.cassette
            .get(&fp)
            .map(|e| ChatMessage::assistant(e.response.clone()))
            .ok_or(LlmError::CassetteMiss { fingerprint: fp })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(LlmError),
    Fail(LlmError),
}

/// Blocking client for the standard chat-completions wire format.
pub struct LiveBackend {
    client: reqwest::blocking::Client,
    token: String,
}

impl LiveBackend {
    /// Reads the token from `config.api_key_env`; fails before any network
    /// activity when it is unset.
    pub fn new(config: &ProviderConfig) -> Result<Self, LlmError> {
        let token = std::env::var(&config.api_key_env)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| LlmError::AuthMissing {
                var: config.api_key_env.clone(),
            })?;
        Self::with_token(config, token)
    }

    pub fn with_token(config: &ProviderConfig, token: impl Into<String>) -> Result<Self, LlmError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            token: token.into(),
        })
    }

    fn attempt(&self, messages: &[ChatMessage], config: &ProviderConfig) -> Attempt {
        NETWORK_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let body = WireRequest {
            model: &config.model,
            temperature: config.temperature,
            messages,
        };
        let response = match self
            .client
            .post(&config.endpoint)
            .bearer_auth(&self.token)
            .json(&body)
            .send()
        {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout { attempts: 0 }),
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string())),
        };
        let status = response.status();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout { attempts: 0 }),
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string())),
        };
        if !status.is_success() {
            let err = LlmError::Http {
                status: status.as_u16(),
                body: text,
            };
            return if status.as_u16() == 429 || status.is_server_error() {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            };
        }
        let parsed: WireResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fail(LlmError::MalformedResponse(e.to_string())),
        };
        match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
            Some(content) => Attempt::Done(content),
            None => Attempt::Fail(LlmError::MalformedResponse("no choices[0].message.content".into())),
        }
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, messages: &[ChatMessage], config: &ProviderConfig) -> Result<ChatMessage, LlmError> {
        check_messages(messages)?;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(messages, config) {
                Attempt::Done(text) => return Ok(ChatMessage::assistant(text)),
                Attempt::Fail(err) => return Err(err),
                Attempt::Retry(err) if attempts > config.max_retries => {
                    return Err(match err {
                        LlmError::Timeout { .. } => LlmError::Timeout { attempts },
                        other => other,
                    });
                }
                Attempt::Retry(err) => {
                    let delay = config.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                    log::warn!("attempt {attempts} failed ({err}); retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}

/// Serves stored responses when present; otherwise asks `inner` and appends
/// the reply to the cassette file.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    cassette: Mutex<Cassette>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn open(inner: B, path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        let cassette = if path.exists() {
            Cassette::load(&path)?
        } else {
            Cassette::new()
        };
        Ok(Self {
            inner,
            path,
            cassette: Mutex::new(cassette),
        })
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().expect("cassette lock").clone()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, messages: &[ChatMessage], config: &ProviderConfig) -> Result<ChatMessage, LlmError> {
        check_messages(messages)?;
        let fp = fingerprint(messages, config);
        if let Some(hit) = self.cassette.lock().expect("cassette lock").get(&fp) {
            return Ok(ChatMessage::assistant(hit.response.clone()));
        }
        let reply = self.inner.complete(messages, config)?;

        let mut cassette = self.cassette.lock().expect("cassette lock");
        let entry = CassetteEntry {
            fingerprint: fp,
            model: config.model.clone(),
            response: reply.content.clone(),
        };
        let line = serde_json::to_string(&entry).expect("entry serializes") + "\n";
        if cassette.insert(entry) {
            let write_err = |e: std::io::Error| LlmError::FileWrite {
                path: self.path.clone(),
                message: e.to_string(),
            };
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(write_err)?;
            file.write_all(line.as_bytes()).map_err(write_err)?;
        }
        Ok(reply)
    }
}

/// Sends `messages` to the live endpoint, or returns the stored reply, and
/// keeps the cassette at `cassette_path` up to date.
pub fn record_session(
    messages: &[ChatMessage],
    config: &ProviderConfig,
    cassette_path: &Path,
) -> Result<ChatMessage, LlmError> {
    RecordingBackend::open(LiveBackend::new(config)?, cassette_path)?.complete(messages, config)
}

type Responder = dyn Fn(&[ChatMessage]) -> Result<String, LlmError> + Send + Sync;

/// In-process backend that never touches the network.
pub struct FakeBackend {
    respond: Box<Responder>,
}

impl FakeBackend {
    pub fn fixed(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::from_fn(move |_| Ok(reply.clone()))
    }

    pub fn from_fn(f: impl Fn(&[ChatMessage]) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        Self { respond: Box::new(f) }
    }
}

impl ChatBackend for FakeBackend {
    fn complete(&self, messages: &[ChatMessage], _config: &ProviderConfig) -> Result<ChatMessage, LlmError> {
        check_messages(messages)?;
        (self.respond)(messages).map(ChatMessage::assistant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Replay,
    Record,
}

impl std::str::FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "replay" => Ok(Self::Replay),
            "record" => Ok(Self::Record),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

pub fn open_backend(
    mode: BackendMode,
    config: &ProviderConfig,
    cassette: Option<&Path>,
) -> Result<Box<dyn ChatBackend>, LlmError> {
    let need_cassette =
        || cassette.ok_or_else(|| LlmError::InvalidConfig(format!("{mode:?} backend needs a cassette path")));
    Ok(match mode {
        BackendMode::Live => Box::new(LiveBackend::new(config)?),
        BackendMode::Replay => Box::new(ReplayBackend::open(need_cassette()?)?),
        BackendMode::Record => Box::new(RecordingBackend::open(LiveBackend::new(config)?, need_cassette()?)?),
    })
}
