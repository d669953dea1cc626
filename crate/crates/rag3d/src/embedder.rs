//! Text embedders: the deterministic local hashing fallback and a remote
//! HTTP provider.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rag3d_core::embedding::{hash_embed, EmbeddingError, EmbeddingVector, DEFAULT_DIM};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorCode;
use crate::sync::Semaphore;

/// Env var holding the remote provider's bearer token.
pub const API_KEY_ENV: &str = "EMBEDDING_API_KEY";
/// Retries after the first failed remote attempt.
pub const REMOTE_RETRIES: u32 = 2;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text at index {index} is empty")]
    EmptyText { index: usize },
    #[error("embedding provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("embedding provider returned a bad response: {0}")]
    ProviderBadResponse(String),
    #[error("invalid embedder configuration: {0}")]
    Config(String),
}

impl ErrorCode for EmbedError {
    fn code(&self) -> &'static str {
        match self {
            Self::EmptyText { .. } => "EmptyText",
            Self::ProviderUnreachable(_) => "ProviderUnreachable",
            Self::ProviderBadResponse(_) => "ProviderBadResponse",
            Self::Config(_) => "EmbedderConfig",
        }
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds every text; element `i` corresponds to `texts[i]`.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| EmbedError::ProviderBadResponse("no vector returned".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    Remote,
    #[default]
    LocalFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub provider: EmbedderKind,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub dim: usize,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    /// First retry delay; doubles per retry.
    pub retry_backoff_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            provider: EmbedderKind::LocalFallback,
            endpoint: None,
            model_name: None,
            dim: DEFAULT_DIM,
            timeout_secs: 30.0,
            max_in_flight: 4,
            retry_backoff_ms: 250,
        }
    }
}

impl EmbedderConfig {
    pub fn local(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::Config("dim must be positive".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(EmbedError::Config("timeout must be positive".into()));
        }
        if self.provider == EmbedderKind::Remote {
            if self.endpoint.as_deref().unwrap_or("").is_empty() {
                return Err(EmbedError::Config(
                    "remote provider requires an endpoint".into(),
                ));
            }
            if self.model_name.as_deref().unwrap_or("").is_empty() {
                return Err(EmbedError::Config(
                    "remote provider requires a model name".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.provider {
            EmbedderKind::LocalFallback => Arc::new(LocalEmbedder::new(self.dim)),
            EmbedderKind::Remote => Arc::new(RemoteEmbedder::new(self.clone())),
        })
    }
}

/// Feature-hashing embedder; a pure function of `(text, dim)`.
#[derive(Debug, Clone, Copy)]
pub struct LocalEmbedder {
    dim: usize,
}

impl LocalEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for LocalEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                hash_embed(t, self.dim).map_err(|e| match e {
                    EmbeddingError::EmptyText => EmbedError::EmptyText { index },
                    other => EmbedError::Config(other.to_string()),
                })
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    inputs: &'a [&'a str],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Client for `POST {model, inputs} -> {embeddings}` providers.
pub struct RemoteEmbedder {
    cfg: EmbedderConfig,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

enum Attempt {
    Retry(String),
    Fail(EmbedError),
}

impl RemoteEmbedder {
    pub fn new(cfg: EmbedderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = Semaphore::new(cfg.max_in_flight);
        Self {
            cfg,
            agent,
            in_flight,
        }
    }

    fn attempt(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, Attempt> {
        let endpoint = self.cfg.endpoint.as_deref().unwrap_or_default();
        let model = self.cfg.model_name.as_deref().unwrap_or_default();
        let mut req = self
            .agent
            .post(endpoint)
            .header("Content-Type", "application/json");
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if let Some(key) = &key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(EmbedRequest {
                model,
                inputs: texts,
            })
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fail(EmbedError::ProviderBadResponse(format!(
                "status {status}"
            ))));
        }
        let parsed: EmbedResponse = serde_json::from_str(&body).map_err(|e| {
            Attempt::Fail(EmbedError::ProviderBadResponse(format!(
                "unexpected payload: {e}"
            )))
        })?;
        if parsed.embeddings.len() != texts.len() {
            return Err(Attempt::Fail(EmbedError::ProviderBadResponse(format!(
                "expected {} vectors, got {}",
                texts.len(),
                parsed.embeddings.len()
            ))));
        }
        parsed
            .embeddings
            .into_iter()
            .map(|values| {
                if values.len() != self.cfg.dim {
                    return Err(Attempt::Fail(EmbedError::ProviderBadResponse(format!(
                        "expected dim {}, got {}",
                        self.cfg.dim,
                        values.len()
                    ))));
                }
                EmbeddingVector::normalize(values)
                    .map_err(|e| Attempt::Fail(EmbedError::ProviderBadResponse(e.to_string())))
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText { index });
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let _permit = self.in_flight.acquire();
        let mut last = String::new();
        for attempt in 0..=REMOTE_RETRIES {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(
                    self.cfg.retry_backoff_ms << (attempt - 1),
                ));
            }
            match self.attempt(texts) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("embedding attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(EmbedError::ProviderUnreachable(last))
    }
}
