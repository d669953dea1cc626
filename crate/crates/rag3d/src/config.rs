//! Service configuration file and the component graph built from it.
//!
//! ```toml
//! bind = "127.0.0.1:8731"
//! corpus_root = "corpus"
//! index_snapshot = "index.snap"
//! sessions_root = "sessions"
//! reports_root = "reports"
//! providers = "providers.toml"
//!
//! [embedder]
//! provider = "local-fallback"
//! dim = 768
//!
//! [executor]
//! host_binary = "blender"
//! runner_path = "runner/rag3d_runner.py"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rag3d_core::prompt::{PromptTemplate, DEFAULT_TOKEN_BUDGET};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::{load_corpus, CorpusLoadError, LoadedCorpus};
use crate::embedder::{EmbedError, Embedder, EmbedderConfig};
use crate::error::ErrorCode;
use crate::evaluation::{AlignmentScorer, HttpScorer};
use crate::executor::{ExecutorEnv, HostExecutor, RenderSpec, ScriptRunner};
use crate::gateway::{Gateway, Registry, RegistryError};
use crate::retrieval::{IndexRetriever, DEFAULT_K};
use crate::session::Pipeline;
use crate::store::{build_index, load_snapshot, save_snapshot, SharedIndex, StoreError};

pub const TOKEN_ENV: &str = "RAG3D_TOKEN";
pub const DEFAULT_BIND: &str = "127.0.0.1:8731";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationDefaults {
    pub k: usize,
    pub budget: usize,
}

impl Default for GenerationDefaults {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            budget: DEFAULT_TOKEN_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub endpoint: String,
    #[serde(default = "default_scorer_timeout")]
    pub timeout_secs: f64,
}

fn default_scorer_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub corpus_root: PathBuf,
    pub index_snapshot: PathBuf,
    pub sessions_root: PathBuf,
    pub reports_root: PathBuf,
    /// Provider registry file; only the built-in mock provider when unset.
    pub providers: Option<PathBuf>,
    /// Shared secret for every endpoint but `/health`. `RAG3D_TOKEN` wins.
    pub token: Option<String>,
    pub embedder: EmbedderConfig,
    pub executor: ExecutorEnv,
    pub render: RenderSpec,
    pub scorer: Option<ScorerConfig>,
    pub generation: GenerationDefaults,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.into(),
            corpus_root: "corpus".into(),
            index_snapshot: "index.snap".into(),
            sessions_root: "sessions".into(),
            reports_root: "reports".into(),
            providers: None,
            token: None,
            embedder: EmbedderConfig::default(),
            executor: ExecutorEnv::default(),
            render: RenderSpec::default(),
            scorer: None,
            generation: GenerationDefaults::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid bind address `{0}`")]
    Bind(String),
    #[error(transparent)]
    Corpus(#[from] CorpusLoadError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("snapshot has dimension {snapshot}, embedder produces {embedder}")]
    SnapshotDim { snapshot: usize, embedder: usize },
}

impl ErrorCode for ConfigError {
    fn code(&self) -> &'static str {
        match self {
            Self::Read { .. } => "ConfigUnreadable",
            Self::Parse(_) => "ConfigParse",
            Self::Bind(_) => "InvalidBind",
            Self::Corpus(e) => e.code(),
            Self::Embed(e) => e.code(),
            Self::Store(e) => e.code(),
            Self::Registry(e) => e.code(),
            Self::SnapshotDim { .. } => "DimensionMismatch",
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl ServiceConfig {
    pub fn parse(source: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self =
            toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?;
        resolve(base_dir, &mut cfg.corpus_root);
        resolve(base_dir, &mut cfg.index_snapshot);
        resolve(base_dir, &mut cfg.sessions_root);
        resolve(base_dir, &mut cfg.reports_root);
        if let Some(p) = cfg.providers.as_mut() {
            resolve(base_dir, p);
        }
        resolve(base_dir, &mut cfg.executor.runner_path);
        resolve(base_dir, &mut cfg.executor.workdir);
        // Bare names are looked up on PATH; anything with a separator is a path.
        if cfg.executor.host_binary.components().count() > 1 {
            resolve(base_dir, &mut cfg.executor.host_binary);
        }
        if let Ok(token) = std::env::var(TOKEN_ENV) {
            if !token.is_empty() {
                cfg.token = Some(token);
            }
        }
        cfg.bind_addr()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::parse(&source, base)
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.bind
            .parse()
            .map_err(|_| ConfigError::Bind(self.bind.clone()))
    }

    pub fn registry(&self) -> Result<Registry, ConfigError> {
        Ok(match &self.providers {
            Some(p) => Registry::load(p)?,
            None => Registry::default(),
        })
    }
}

/// Loads the snapshot when present, otherwise embeds the corpus and writes
/// one.
pub fn open_index(
    corpus: &LoadedCorpus,
    embedder: &dyn Embedder,
    snapshot: &Path,
) -> Result<SharedIndex, ConfigError> {
    let index = if snapshot.is_file() {
        let index = load_snapshot(snapshot)?;
        if let Some(dim) = index.dim() {
            if dim != embedder.dim() {
                return Err(ConfigError::SnapshotDim {
                    snapshot: dim,
                    embedder: embedder.dim(),
                });
            }
        }
        index
    } else {
        let index = build_index(&corpus.corpus, embedder)?;
        save_snapshot(&index, snapshot)?;
        index
    };
    Ok(SharedIndex::new(index))
}

/// Every long-lived component the CLI and service work with.
pub struct App {
    pub config: ServiceConfig,
    pub corpus: Arc<LoadedCorpus>,
    pub embedder: Arc<dyn Embedder>,
    pub index: SharedIndex,
    pub gateway: Arc<Gateway>,
    pub pipeline: Arc<Pipeline>,
    pub scorer: Option<Arc<dyn AlignmentScorer>>,
}

/// Swappable pieces, for tests and embedding applications.
#[derive(Default)]
pub struct Overrides {
    pub gateway: Option<Gateway>,
    pub runner: Option<Arc<dyn ScriptRunner>>,
    pub scorer: Option<Option<Arc<dyn AlignmentScorer>>>,
}

impl App {
    pub fn build(config: ServiceConfig) -> Result<Self, ConfigError> {
        Self::build_with(config, Overrides::default())
    }

    pub fn build_with(config: ServiceConfig, overrides: Overrides) -> Result<Self, ConfigError> {
        let corpus = Arc::new(load_corpus(&config.corpus_root, false)?);
        let embedder = config.embedder.build()?;
        let index = open_index(&corpus, embedder.as_ref(), &config.index_snapshot)?;
        let gateway = Arc::new(match overrides.gateway {
            Some(g) => g,
            None => Gateway::new(config.registry()?),
        });
        let runner = overrides
            .runner
            .unwrap_or_else(|| Arc::new(HostExecutor::new(config.executor.clone())));
        let scorer = overrides.scorer.unwrap_or_else(|| {
            config.scorer.as_ref().map(|s| {
                Arc::new(HttpScorer::new(
                    &s.endpoint,
                    Duration::from_secs_f64(s.timeout_secs),
                )) as Arc<dyn AlignmentScorer>
            })
        });
        let retriever = Arc::new(IndexRetriever {
            embedder: embedder.clone(),
            index: index.clone(),
            corpus: corpus.clone(),
        });
        let pipeline = Arc::new(Pipeline {
            retriever,
            gateway: gateway.clone(),
            runner,
            template: PromptTemplate::default(),
            render: config.render.clone(),
        });
        Ok(Self {
            config,
            corpus,
            embedder,
            index,
            gateway,
            pipeline,
            scorer,
        })
    }
}
