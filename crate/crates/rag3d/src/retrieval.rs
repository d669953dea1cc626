//! Query-time exemplar lookup.

use std::sync::Arc;

use rag3d_core::corpus::CorpusEntry;
use rag3d_core::index::{IndexError, SearchHit};
use rag3d_core::prompt::Exemplar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::LoadedCorpus;
use crate::embedder::{EmbedError, Embedder};
use crate::error::ErrorCode;
use crate::store::SharedIndex;

/// Exemplars retrieved per request unless configured otherwise.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index is empty")]
    EmptyIndex,
    #[error("index references entry `{0}` which is not in the corpus")]
    DanglingEntryId(String),
    #[error("cannot read code for entry `{entry_id}`: {message}")]
    CodeUnreadable { entry_id: String, message: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index search failed: {0}")]
    Index(IndexError),
}

impl ErrorCode for RetrievalError {
    fn code(&self) -> &'static str {
        match self {
            Self::EmptyQuery => "EmptyQuery",
            Self::InvalidK => "InvalidK",
            Self::EmptyIndex => "EmptyIndex",
            Self::DanglingEntryId(_) => "DanglingEntryId",
            Self::CodeUnreadable { .. } => "CodeUnreadable",
            Self::Embed(e) => e.code(),
            Self::Index(e) => e.code(),
        }
    }
}

/// A search hit resolved to its corpus entry and script text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedExemplar {
    pub hit: SearchHit,
    pub entry: CorpusEntry,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalContext {
    pub query_text: String,
    pub k: usize,
    /// In rank order.
    pub hits: Vec<RetrievedExemplar>,
}

impl RetrievalContext {
    /// Prompt exemplars in rank order. Images stay out of the prompt.
    pub fn exemplars(&self) -> Vec<Exemplar> {
        self.hits
            .iter()
            .map(|h| Exemplar {
                description: h.entry.description.clone(),
                code: h.code.clone(),
            })
            .collect()
    }
}

pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalContext, RetrievalError>;
}

/// Embeds the query, searches the shared index, resolves hits in the corpus.
pub struct IndexRetriever {
    pub embedder: Arc<dyn Embedder>,
    pub index: SharedIndex,
    pub corpus: Arc<LoadedCorpus>,
}

impl Retriever for IndexRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalContext, RetrievalError> {
        if query.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.index.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let vector = self.embedder.embed_text(query)?;
        let hits = self.index.search(&vector, k).map_err(|e| match e {
            IndexError::EmptyIndex => RetrievalError::EmptyIndex,
            other => RetrievalError::Index(other),
        })?;
        let hits =
            hits.into_iter()
                .map(|hit| {
                    let entry = self
                        .corpus
                        .corpus
                        .get(&hit.entry_id)
                        .ok_or_else(|| RetrievalError::DanglingEntryId(hit.entry_id.clone()))?
                        .clone();
                    let code = self.corpus.read_code(&entry).map_err(|e| {
                        RetrievalError::CodeUnreadable {
                            entry_id: entry.id.clone(),
                            message: e.to_string(),
                        }
                    })?;
                    Ok(RetrievedExemplar { hit, entry, code })
                })
                .collect::<Result<Vec<_>, RetrievalError>>()?;
        Ok(RetrievalContext {
            query_text: query.to_owned(),
            k,
            hits,
        })
    }
}

/// Stands in where no index exists, e.g. base-mode runs without a corpus.
/// Every lookup fails with [`RetrievalError::EmptyIndex`].
#[derive(Debug, Default, Clone, Copy)]
pub struct NoRetriever;

impl Retriever for NoRetriever {
    fn retrieve(&self, _query: &str, _k: usize) -> Result<RetrievalContext, RetrievalError> {
        Err(RetrievalError::EmptyIndex)
    }
}
