//! Chat-completion client shared by every model backend.
//!
//! Backends are registry entries. Each entry names an adapter that knows the
//! backend's wire shape; everything else (retries, timeouts, credentials,
//! concurrency caps) is handled here uniformly.

mod adapters;
mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorCode;
use crate::sync::Semaphore;

pub use adapters::HttpTransport;
pub use mock::{MockTransport, DEFAULT_MOCK_SCRIPT};

pub const MOCK_PROVIDER: &str = "mock";
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
/// Longest slice of a provider error body kept in errors and logs.
pub const BODY_EXCERPT_CHARS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
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
pub struct ChatRequest {
    pub provider_id: String,
    pub messages: Vec<ChatMessage>,
    /// Falls back to the provider's configured temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub provider_id: String,
    pub latency_ms: u64,
    pub truncated: bool,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    /// Chat-completions shape; also covers compatible hosts such as Mistral.
    OpenAi,
    Anthropic,
    Gemini,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub adapter: AdapterKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model_name: String,
    /// Env var holding the API key. `None` means the backend needs no key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "defaults::timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    /// Output token cap sent to the backend.
    #[serde(default = "defaults::max_output")]
    pub max_output: u32,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::max_in_flight")]
    pub max_in_flight: usize,
    /// Delay before the first retry; doubles on each later one.
    #[serde(default = "defaults::backoff_ms")]
    pub backoff_ms: u64,
    /// Fixed reply for the mock adapter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_response: Option<String>,
}

mod defaults {
    pub fn timeout_secs() -> f64 {
        120.0
    }
    pub fn max_retries() -> u32 {
        2
    }
    pub fn max_output() -> u32 {
        4096
    }
    pub fn temperature() -> f64 {
        super::DEFAULT_TEMPERATURE
    }
    pub fn max_in_flight() -> usize {
        4
    }
    pub fn backoff_ms() -> u64 {
        500
    }
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self {
            provider_id: MOCK_PROVIDER.into(),
            adapter: AdapterKind::Mock,
            endpoint: String::new(),
            model_name: "mock".into(),
            api_key_env: None,
            timeout_secs: defaults::timeout_secs(),
            max_retries: defaults::max_retries(),
            max_output: defaults::max_output(),
            temperature: DEFAULT_TEMPERATURE,
            max_in_flight: defaults::max_in_flight(),
            backoff_ms: 10,
            mock_response: None,
        }
    }

    fn validate(&self) -> Result<(), RegistryError> {
        let bad = |why: &str| RegistryError::Invalid {
            provider_id: self.provider_id.clone(),
            reason: why.into(),
        };
        if self.provider_id.trim().is_empty() {
            return Err(bad("provider_id is empty"));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(bad("timeout must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(bad("max_in_flight must be at least 1"));
        }
        if self.adapter != AdapterKind::Mock && self.endpoint.is_empty() {
            return Err(bad("endpoint is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read provider registry {path}: {message}")]
    Read { path: String, message: String },
    #[error("malformed provider registry: {0}")]
    Parse(String),
    #[error("provider `{0}` is registered twice")]
    Duplicate(String),
    #[error("provider `{provider_id}`: {reason}")]
    Invalid { provider_id: String, reason: String },
}

impl ErrorCode for RegistryError {
    fn code(&self) -> &'static str {
        match self {
            Self::Read { .. } => "RegistryUnreadable",
            Self::Parse(_) => "RegistryParse",
            Self::Duplicate(_) => "DuplicateProvider",
            Self::Invalid { .. } => "InvalidProvider",
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default)]
    provider: Vec<ProviderConfig>,
}

/// Provider configs keyed by id. A `mock` entry is always present unless the
/// file overrides it.
#[derive(Debug, Clone)]
pub struct Registry {
    providers: BTreeMap<String, ProviderConfig>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut providers = BTreeMap::new();
        providers.insert(MOCK_PROVIDER.to_owned(), ProviderConfig::mock());
        Self { providers }
    }
}

impl Registry {
    pub fn from_configs(configs: Vec<ProviderConfig>) -> Result<Self, RegistryError> {
        let mut registry = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for cfg in configs {
            cfg.validate()?;
            if !seen.insert(cfg.provider_id.clone()) {
                return Err(RegistryError::Duplicate(cfg.provider_id));
            }
            registry.providers.insert(cfg.provider_id.clone(), cfg);
        }
        Ok(registry)
    }

    /// Parses `[[provider]]` tables.
    pub fn from_toml(source: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile =
            toml::from_str(source).map_err(|e| RegistryError::Parse(e.to_string()))?;
        Self::from_configs(file.provider)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let source = std::fs::read_to_string(path).map_err(|e| RegistryError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&source)
    }

    pub fn get(&self, provider_id: &str) -> Option<&ProviderConfig> {
        self.providers.get(provider_id)
    }

    /// Sorted provider ids.
    pub fn ids(&self) -> Vec<String> {
        self.providers.keys().cloned().collect()
    }

    pub fn contains(&self, provider_id: &str) -> bool {
        self.providers.contains_key(provider_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    pub truncated: bool,
}

/// Outcome of one failed wire attempt. Messages must already be free of the
/// API key; the gateway scrubs them again before surfacing anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptError {
    Timeout,
    /// Worth retrying: connection failures, 429, 5xx.
    Transient(String),
    /// Not worth retrying: 4xx other than 429, unparseable payloads.
    Fatal {
        status: Option<u16>,
        body: String,
    },
}

pub trait ChatTransport: Send + Sync {
    fn send(
        &self,
        provider: &ProviderConfig,
        api_key: Option<&str>,
        messages: &[ChatMessage],
        temperature: f64,
    ) -> Result<Completion, AttemptError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("provider `{provider_id}` needs credentials in env var {env_var}")]
    MissingCredentials {
        provider_id: String,
        env_var: String,
    },
    #[error("request has no messages")]
    EmptyRequest,
    #[error("provider `{provider_id}` timed out after {attempts} attempt(s)")]
    Timeout { provider_id: String, attempts: u32 },
    #[error("provider `{provider_id}` returned an error (status {}): {body}", status_text(.status))]
    ProviderError {
        provider_id: String,
        status: Option<u16>,
        body: String,
    },
    #[error("provider `{provider_id}` failed {attempts} attempts; last error: {last}")]
    RetriesExhausted {
        provider_id: String,
        attempts: u32,
        last: String,
    },
}

fn status_text(status: &Option<u16>) -> String {
    status.map_or_else(|| "none".to_owned(), |s| s.to_string())
}

impl ErrorCode for GatewayError {
    fn code(&self) -> &'static str {
        match self {
            Self::UnknownProvider(_) => "UnknownProvider",
            Self::MissingCredentials { .. } => "MissingCredentials",
            Self::EmptyRequest => "EmptyRequest",
            Self::Timeout { .. } => "Timeout",
            Self::ProviderError { .. } => "ProviderError",
            Self::RetriesExhausted { .. } => "RetriesExhausted",
        }
    }
}

struct Redactor<'a>(Option<&'a str>);

impl Redactor<'_> {
    fn scrub(&self, text: &str) -> String {
        let text = excerpt(text);
        match self.0 {
            Some(key) if !key.is_empty() => text.replace(key, "[redacted]"),
            _ => text,
        }
    }
}

fn excerpt(text: &str) -> String {
    match text.char_indices().nth(BODY_EXCERPT_CHARS) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_owned(),
    }
}

pub struct Gateway {
    registry: Registry,
    http: Arc<dyn ChatTransport>,
    mock: Arc<dyn ChatTransport>,
    caps: BTreeMap<String, Semaphore>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("providers", &self.registry.ids())
            .finish()
    }
}

impl Gateway {
    pub fn new(registry: Registry) -> Self {
        Self::with_transports(registry, Arc::new(HttpTransport), Arc::new(MockTransport))
    }

    pub fn with_transports(
        registry: Registry,
        http: Arc<dyn ChatTransport>,
        mock: Arc<dyn ChatTransport>,
    ) -> Self {
        let caps = registry
            .providers
            .iter()
            .map(|(id, cfg)| (id.clone(), Semaphore::new(cfg.max_in_flight)))
            .collect();
        Self {
            registry,
            http,
            mock,
            caps,
        }
    }

    /// Replaces the transport behind every mock-adapter provider.
    pub fn with_mock(self, mock: Arc<dyn ChatTransport>) -> Self {
        Self { mock, ..self }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn provider_ids(&self) -> Vec<String> {
        self.registry.ids()
    }

    /// Resolves the provider and its key without touching the network.
    pub fn check_credentials(&self, provider_id: &str) -> Result<(), GatewayError> {
        self.resolve(provider_id).map(|_| ())
    }

    fn resolve(
        &self,
        provider_id: &str,
    ) -> Result<(&ProviderConfig, Option<String>), GatewayError> {
        let cfg = self
            .registry
            .get(provider_id)
            .ok_or_else(|| GatewayError::UnknownProvider(provider_id.to_owned()))?;
        let key = match (&cfg.api_key_env, cfg.adapter) {
            (_, AdapterKind::Mock) | (None, _) => None,
            (Some(var), _) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Some(v),
                _ => {
                    return Err(GatewayError::MissingCredentials {
                        provider_id: provider_id.to_owned(),
                        env_var: var.clone(),
                    })
                }
            },
        };
        Ok((cfg, key))
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let (cfg, key) = self.resolve(&req.provider_id)?;
        if req.messages.is_empty() {
            return Err(GatewayError::EmptyRequest);
        }
        let transport = match cfg.adapter {
            AdapterKind::Mock => &self.mock,
            _ => &self.http,
        };
        let redact = Redactor(key.as_deref());
        let temperature = req.temperature.unwrap_or(cfg.temperature);
        let _permit = self.caps.get(&cfg.provider_id).map(Semaphore::acquire);

        let started = Instant::now();
        let mut all_timeouts = true;
        let mut last = String::new();
        let attempts_allowed = cfg.max_retries + 1;
        for attempt in 1..=attempts_allowed {
            if attempt > 1 {
                let shift = (attempt - 2).min(16);
                thread::sleep(Duration::from_millis(
                    cfg.backoff_ms.saturating_mul(1 << shift),
                ));
            }
            match transport.send(cfg, key.as_deref(), &req.messages, temperature) {
                Ok(done) => {
                    return Ok(ChatResponse {
                        content: done.content,
                        provider_id: cfg.provider_id.clone(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        truncated: done.truncated,
                        attempts: attempt,
                    })
                }
                Err(AttemptError::Fatal { status, body }) => {
                    let body = redact.scrub(&body);
                    log::warn!("provider {} rejected request: {body}", cfg.provider_id);
                    return Err(GatewayError::ProviderError {
                        provider_id: cfg.provider_id.clone(),
                        status,
                        body,
                    });
                }
                Err(AttemptError::Timeout) => {
                    log::warn!("provider {} attempt {attempt} timed out", cfg.provider_id);
                    last = "timeout".into();
                }
                Err(AttemptError::Transient(msg)) => {
                    all_timeouts = false;
                    last = redact.scrub(&msg);
                    log::warn!(
                        "provider {} attempt {attempt} failed: {last}",
                        cfg.provider_id
                    );
                }
            }
        }
        if all_timeouts {
            Err(GatewayError::Timeout {
                provider_id: cfg.provider_id.clone(),
                attempts: attempts_allowed,
            })
        } else {
            Err(GatewayError::RetriesExhausted {
                provider_id: cfg.provider_id.clone(),
                attempts: attempts_allowed,
                last,
            })
        }
    }
}
