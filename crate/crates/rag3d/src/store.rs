//! Index construction from a corpus, snapshot files, and the shared
//! reader/writer handle used by concurrent callers.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use rag3d_core::corpus::Corpus;
use rag3d_core::embedding::EmbeddingVector;
use rag3d_core::index::{IndexError, IndexRecord, SearchHit, VectorIndex};
use rag3d_core::snapshot::{self, SnapshotError};
use thiserror::Error;

use crate::embedder::{EmbedError, Embedder};
use crate::error::ErrorCode;

const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt snapshot {path}: {source}")]
    CorruptSnapshot {
        path: PathBuf,
        source: SnapshotError,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

impl ErrorCode for StoreError {
    fn code(&self) -> &'static str {
        match self {
            Self::Io { .. } => "IoError",
            Self::CorruptSnapshot { .. } => "CorruptSnapshot",
            Self::Embed(e) => e.code(),
            Self::Index(e) => e.code(),
        }
    }
}

/// Embeds every description in corpus order and indexes it under the entry id.
pub fn build_index(corpus: &Corpus, embedder: &dyn Embedder) -> Result<VectorIndex, StoreError> {
    let mut index = VectorIndex::with_dim(embedder.dim());
    for chunk in corpus.entries().chunks(EMBED_BATCH) {
        let texts: Vec<&str> = chunk.iter().map(|e| e.description.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        for (entry, vector) in chunk.iter().zip(vectors) {
            index.insert(IndexRecord::new(entry.id.clone(), vector))?;
        }
    }
    Ok(index)
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_snapshot(index: &VectorIndex, path: &Path) -> Result<(), StoreError> {
    let bytes = snapshot::encode(index).map_err(|source| StoreError::CorruptSnapshot {
        path: path.to_path_buf(),
        source,
    })?;
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(&bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<VectorIndex, StoreError> {
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    snapshot::decode(&bytes).map_err(|source| StoreError::CorruptSnapshot {
        path: path.to_path_buf(),
        source,
    })
}

/// Many readers or one writer. Searches run under the read lock, so they
/// never see a half-inserted record.
#[derive(Debug, Clone, Default)]
pub struct SharedIndex {
    inner: Arc<RwLock<VectorIndex>>,
}

impl SharedIndex {
    pub fn new(index: VectorIndex) -> Self {
        Self {
            inner: Arc::new(RwLock::new(index)),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, VectorIndex> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.read().is_empty()
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.read().search_top_k(query, k)
    }

    pub fn insert(&self, record: IndexRecord) -> Result<(), IndexError> {
        self.inner
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(record)
    }

    /// Swaps in a rebuilt index.
    pub fn replace(&self, index: VectorIndex) {
        *self.inner.write().unwrap_or_else(|e| e.into_inner()) = index;
    }
}
