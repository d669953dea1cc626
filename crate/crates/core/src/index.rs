//! Exact in-memory cosine index.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, EmbeddingVector};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("entry id `{0}` is already indexed")]
    DuplicateEntryId(String),
    #[error("dimension mismatch: index holds {expected}-d vectors, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub entry_id: String,
    pub vector: EmbeddingVector,
}

impl IndexRecord {
    pub fn new(entry_id: impl Into<String>, vector: EmbeddingVector) -> Self {
        Self {
            entry_id: entry_id.into(),
            vector,
        }
    }
}

/// One ranked search result. Ranks start at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub entry_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Flat row-major store of unit vectors keyed by entry id.
///
/// The dimension is fixed either at construction or by the first insert.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorIndex {
    dim: Option<usize>,
    ids: Vec<String>,
    data: Vec<f64>,
    positions: BTreeMap<String, usize>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::default()
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, entry_id: &str) -> bool {
        self.positions.contains_key(entry_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    /// The stored vector at insertion position `pos`.
    pub fn vector_at(&self, pos: usize) -> Option<&[f64]> {
        let dim = self.dim?;
        self.data.get(pos * dim..(pos + 1) * dim)
    }

    pub fn get(&self, entry_id: &str) -> Option<&[f64]> {
        self.positions
            .get(entry_id)
            .and_then(|&p| self.vector_at(p))
    }

    /// Records in insertion order.
    pub fn records(&self) -> Vec<IndexRecord> {
        (0..self.len())
            .map(|p| IndexRecord {
                entry_id: self.ids[p].clone(),
                vector: EmbeddingVector::from_stored(self.vector_at(p).unwrap_or(&[]).to_vec()),
            })
            .collect()
    }

    pub fn insert(&mut self, record: IndexRecord) -> Result<(), IndexError> {
        let dim = record.vector.dim();
        match self.dim {
            Some(expected) if expected != dim => {
                return Err(IndexError::DimensionMismatch {
                    expected,
                    actual: dim,
                })
            }
            _ => {}
        }
        if self.positions.contains_key(&record.entry_id) {
            return Err(IndexError::DuplicateEntryId(record.entry_id));
        }
        self.dim = Some(dim);
        self.positions
            .insert(record.entry_id.clone(), self.ids.len());
        self.ids.push(record.entry_id);
        self.data.extend_from_slice(record.vector.values());
        Ok(())
    }

    /// Exact top-k by cosine similarity; ties go to the smaller entry id.
    pub fn search_top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let dim = match self.dim {
            Some(d) if !self.is_empty() => d,
            _ => return Err(IndexError::EmptyIndex),
        };
        if query.dim() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                actual: query.dim(),
            });
        }

        // Max-heap whose top is the worst of the current best k.
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for (pos, row) in self.data.chunks_exact(dim).enumerate() {
            let candidate = Candidate {
                score: dot(row, query.values()).clamp(-1.0, 1.0),
                id: &self.ids[pos],
            };
            if heap.len() < k {
                heap.push(candidate);
            } else if let Some(worst) = heap.peek() {
                if candidate < *worst {
                    heap.pop();
                    heap.push(candidate);
                }
            }
        }

        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(i, c)| SearchHit {
                entry_id: String::from(c.id),
                score: c.score,
                rank: i + 1,
            })
            .collect())
    }
}

/// Ordered so that "greater" means "ranks lower".
struct Candidate<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

/// Linear scan with a full sort. Reference result for [`VectorIndex::search_top_k`].
pub fn brute_force_search(
    records: &[IndexRecord],
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<SearchHit>, IndexError> {
    if k == 0 {
        return Err(IndexError::InvalidK);
    }
    if records.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    let mut scored = Vec::with_capacity(records.len());
    for record in records {
        if record.vector.dim() != query.dim() {
            return Err(IndexError::DimensionMismatch {
                expected: record.vector.dim(),
                actual: query.dim(),
            });
        }
        let score: f64 = record
            .vector
            .values()
            .iter()
            .zip(query.values())
            .fold(0.0, |acc, (a, b)| acc + a * b);
        scored.push((score.clamp(-1.0, 1.0), record.entry_id.as_str()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (score, id))| SearchHit {
            entry_id: String::from(id),
            score,
            rank: i + 1,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::hash_embed;
    use alloc::vec;

    fn unit(values: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector::normalize(values).unwrap()
    }

    #[test]
    fn insert_and_duplicate() {
        let mut index = VectorIndex::new();
        index
            .insert(IndexRecord::new("v1", unit(vec![1.0, 0.0])))
            .unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(
            index.insert(IndexRecord::new("v1", unit(vec![0.0, 1.0]))),
            Err(IndexError::DuplicateEntryId("v1".into()))
        );
        assert_eq!(
            index.insert(IndexRecord::new("v2", unit(vec![0.0, 1.0, 0.0]))),
            Err(IndexError::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        );
        assert_eq!(index.len(), 1);
    }

    #[test]
    fn self_match_ranks_first() {
        let mut index = VectorIndex::new();
        for (id, text) in [
            ("e1", "oak bookshelf"),
            ("e7", "red sports car"),
            ("e3", "tall cactus"),
        ] {
            index
                .insert(IndexRecord::new(id, hash_embed(text, 64).unwrap()))
                .unwrap();
        }
        let hits = index
            .search_top_k(&hash_embed("red sports car", 64).unwrap(), 1)
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].entry_id, "e7");
        assert_eq!(hits[0].rank, 1);
        assert!((hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_larger_than_index_is_truncated() {
        let mut index = VectorIndex::new();
        index
            .insert(IndexRecord::new("a", unit(vec![1.0, 0.0])))
            .unwrap();
        index
            .insert(IndexRecord::new("b", unit(vec![0.0, 1.0])))
            .unwrap();
        let hits = index.search_top_k(&unit(vec![1.0, 1.0]), 5).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        // scores 0.9, 0.5, 0.5
        let q = unit(vec![1.0, 0.0, 0.0]);
        let at = |c: f64| unit(vec![c, libm::sqrt(1.0 - c * c), 0.0]);
        let records = vec![
            IndexRecord::new("b", at(0.5)),
            IndexRecord::new("top", at(0.9)),
            IndexRecord::new("a", at(0.5)),
        ];
        let hits = brute_force_search(&records, &q, 3).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.entry_id.as_str()).collect();
        assert_eq!(ids, vec!["top", "a", "b"]);

        let mut index = VectorIndex::new();
        for r in records {
            index.insert(r).unwrap();
        }
        assert_eq!(index.search_top_k(&q, 3).unwrap(), hits);
    }

    #[test]
    fn empty_index_and_bad_k() {
        let index = VectorIndex::new();
        let q = unit(vec![1.0]);
        assert_eq!(index.search_top_k(&q, 3), Err(IndexError::EmptyIndex));
        assert_eq!(brute_force_search(&[], &q, 3), Err(IndexError::EmptyIndex));
        assert_eq!(index.search_top_k(&q, 0), Err(IndexError::InvalidK));
    }

    #[test]
    fn query_dimension_checked() {
        let mut index = VectorIndex::new();
        index
            .insert(IndexRecord::new("a", unit(vec![1.0, 0.0])))
            .unwrap();
        assert_eq!(
            index.search_top_k(&unit(vec![1.0, 0.0, 0.0]), 1),
            Err(IndexError::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        );
    }
}
