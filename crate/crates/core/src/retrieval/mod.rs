//! Exact dot-product retrieval over an embedded passage corpus.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, EmbeddingBackend};
use crate::corpus::Passage;

mod loss;
pub mod store;

pub use loss::in_batch_loss;
pub use store::{read_index, write_index};

/// Evidence depth used by the verification pipeline and the RAG prompts.
pub const DEFAULT_TOP_K: usize = 30;

const EMBED_BATCH: usize = 64;
const SCAN_SHARD: usize = 8192;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot build an index from zero passages")]
    EmptyCorpus,
    #[error("duplicate passage id `{0}`")]
    DuplicateId(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("the relevant set is empty")]
    EmptyRelevant,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("batch sizes differ: {claims} claims vs {passages} passages")]
    BatchMismatch { claims: usize, passages: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("embedder returned {found} vectors for {expected} texts")]
    EmbeddingCount { expected: usize, found: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("index file: {0}")]
    Format(String),
    #[error("index file: {0}")]
    Io(#[from] std::io::Error),
}

/// A finite, dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, RetrievalError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    /// Dot product accumulated in f64.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = RetrievalError;
    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    // +0.0 folds a -0.0 sum so ties compare equal under total_cmp.
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum::<f64>()
        + 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub passage_id: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

/// Immutable embedded corpus. Safe to query from many threads at once.
#[derive(Debug, Clone)]
pub struct PassageIndex {
    dimension: usize,
    entries: Vec<IndexEntry>,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub passage_id: String,
    pub score: f64,
}

/// Hits in non-increasing score order, ties by ascending passage id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub hits: Vec<RankedHit>,
}

impl RankedResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.passage_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn truncated(&self, k: usize) -> RankedResult {
        RankedResult {
            hits: self.hits.iter().take(k).cloned().collect(),
        }
    }
}

impl PassageIndex {
    /// Assemble an index from already-embedded entries.
    pub fn from_entries(entries: Vec<IndexEntry>) -> Result<Self, RetrievalError> {
        let dimension = entries
            .first()
            .ok_or(RetrievalError::EmptyCorpus)?
            .vector
            .dimension();
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.vector.dimension() != dimension {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dimension,
                    found: e.vector.dimension(),
                });
            }
            if by_id.insert(e.passage_id.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateId(e.passage_id.clone()));
            }
        }
        Ok(PassageIndex {
            dimension,
            entries,
            by_id,
        })
    }

    /// Embed `(id, text)` documents in parallel batches. Later documents whose
    /// text exactly repeats an earlier one are dropped.
    pub fn build(
        documents: &[(String, String)],
        embedder: &dyn EmbeddingBackend,
    ) -> Result<Self, RetrievalError> {
        if documents.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut ids = HashSet::with_capacity(documents.len());
        for (id, _) in documents {
            if !ids.insert(id.as_str()) {
                return Err(RetrievalError::DuplicateId(id.clone()));
            }
        }
        let mut seen_text = HashSet::with_capacity(documents.len());
        let unique: Vec<&(String, String)> = documents
            .iter()
            .filter(|(id, text)| {
                let fresh = seen_text.insert(text.as_str());
                if !fresh {
                    log::debug!("dropping `{id}`: duplicate passage text");
                }
                fresh
            })
            .collect();

        let batches: Vec<Vec<EmbeddingVector>> = unique
            .par_chunks(EMBED_BATCH)
            .map(|chunk| {
                let texts: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
                let vectors = embedder.embed(&texts)?;
                if vectors.len() != texts.len() {
                    return Err(RetrievalError::EmbeddingCount {
                        expected: texts.len(),
                        found: vectors.len(),
                    });
                }
                Ok(vectors)
            })
            .collect::<Result<_, RetrievalError>>()?;

        let entries = unique
            .into_iter()
            .zip(batches.into_iter().flatten())
            .map(|((id, text), vector)| IndexEntry {
                passage_id: id.clone(),
                text: text.clone(),
                vector,
            })
            .collect();
        Self::from_entries(entries)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, passage_id: &str) -> Option<&IndexEntry> {
        self.by_id.get(passage_id).map(|&i| &self.entries[i])
    }

    /// The `k` highest-scoring passages (all of them when the index is
    /// smaller). Large indexes are scanned in parallel shards.
    pub fn top_k<'a>(
        &'a self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<RankedResult, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if query.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                found: query.dimension(),
            });
        }
        let mut pool: Vec<Candidate<'a>> = if self.entries.len() > SCAN_SHARD {
            self.entries
                .par_chunks(SCAN_SHARD)
                .enumerate()
                .flat_map_iter(|(n, shard)| best_in_shard(query, k, n * SCAN_SHARD, shard))
                .collect()
        } else {
            best_in_shard(query, k, 0, &self.entries)
        };
        pool.sort_unstable_by(|a, b| b.cmp(a));
        pool.truncate(k);
        Ok(RankedResult {
            hits: pool
                .into_iter()
                .map(|c| RankedHit {
                    passage_id: self.entries[c.idx].passage_id.clone(),
                    score: c.score,
                })
                .collect(),
        })
    }

    /// Embed `query_text` with `embedder`, then rank.
    pub fn search(
        &self,
        query_text: &str,
        embedder: &dyn EmbeddingBackend,
        k: usize,
    ) -> Result<RankedResult, RetrievalError> {
        let mut vecs = embedder.embed(&[query_text.to_owned()])?;
        let query = vecs.pop().ok_or(RetrievalError::EmbeddingCount {
            expected: 1,
            found: 0,
        })?;
        self.top_k(&query, k)
    }
}

/// Build an index over corpus passages keyed by passage id.
pub fn index_build(
    passages: &[Passage],
    embedder: &dyn EmbeddingBackend,
) -> Result<PassageIndex, RetrievalError> {
    let docs: Vec<(String, String)> = passages
        .iter()
        .map(|p| (p.passage_id.clone(), p.text.clone()))
        .collect();
    PassageIndex::build(&docs, embedder)
}

fn best_in_shard<'a>(
    query: &EmbeddingVector,
    k: usize,
    offset: usize,
    shard: &'a [IndexEntry],
) -> Vec<Candidate<'a>> {
    let mut heap: BinaryHeap<Reverse<Candidate<'a>>> = BinaryHeap::with_capacity(k + 1);
    for (i, e) in shard.iter().enumerate() {
        let cand = Candidate {
            score: query.dot(&e.vector),
            id: &e.passage_id,
            idx: offset + i,
        };
        if heap.len() < k {
            heap.push(Reverse(cand));
        } else if heap.peek().is_some_and(|worst| cand > worst.0) {
            heap.pop();
            heap.push(Reverse(cand));
        }
    }
    heap.into_iter().map(|r| r.0).collect()
}

/// Ordering: higher score is greater; on equal scores the smaller id is greater.
#[derive(Debug, Clone, Copy)]
struct Candidate<'a> {
    score: f64,
    id: &'a str,
    idx: usize,
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(self.id))
    }
}

/// Fraction of `relevant` ids present in `results`.
pub fn recall_at_k(
    results: &RankedResult,
    relevant: &BTreeSet<String>,
) -> Result<f64, RetrievalError> {
    if relevant.is_empty() {
        return Err(RetrievalError::EmptyRelevant);
    }
    let hit = results
        .ids()
        .filter(|id| relevant.contains(*id))
        .collect::<HashSet<_>>()
        .len();
    Ok(hit as f64 / relevant.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn entry(id: &str, values: &[f32]) -> IndexEntry {
        IndexEntry {
            passage_id: id.into(),
            text: format!("text of {id}"),
            vector: v(values),
        }
    }

    fn two_d() -> PassageIndex {
        PassageIndex::from_entries(vec![entry("p2", &[0.0, 1.0]), entry("p1", &[1.0, 0.0])])
            .unwrap()
    }

    #[test]
    fn top_k_basic_and_ties() {
        let idx = two_d();
        let r = idx.top_k(&v(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(
            r.hits,
            vec![RankedHit {
                passage_id: "p1".into(),
                score: 1.0
            }]
        );

        let tie = idx.top_k(&v(&[1.0, 1.0]), 2).unwrap();
        assert_eq!(tie.ids().collect::<Vec<_>>(), ["p1", "p2"]);

        assert_eq!(idx.top_k(&v(&[1.0, 0.0]), 10).unwrap().len(), 2);
        assert!(matches!(
            idx.top_k(&v(&[1.0]), 1),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            idx.top_k(&v(&[1.0, 0.0]), 0),
            Err(RetrievalError::InvalidK)
        ));
    }

    #[test]
    fn index_construction_errors() {
        assert!(matches!(
            PassageIndex::from_entries(vec![]),
            Err(RetrievalError::EmptyCorpus)
        ));
        assert!(matches!(
            PassageIndex::from_entries(vec![entry("a", &[1.0]), entry("a", &[2.0])]),
            Err(RetrievalError::DuplicateId(_))
        ));
        assert!(matches!(
            PassageIndex::from_entries(vec![entry("a", &[1.0]), entry("b", &[2.0, 0.0])]),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
        assert!(EmbeddingVector::new(vec![f32::NAN]).is_err());
    }

    #[test]
    fn build_with_mock_embedder() {
        let embedder = crate::backends::mock::HashedBowEmbedder::new(32);
        let docs: Vec<(String, String)> =
            [("a", "alpha beta"), ("b", "gamma"), ("c", "delta epsilon")]
                .iter()
                .map(|(i, t)| (i.to_string(), t.to_string()))
                .collect();
        let idx = PassageIndex::build(&docs, &embedder).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.dimension(), 32);
        assert_eq!(idx.get("b").unwrap().text, "gamma");

        let mut dup = docs.clone();
        dup.push(("a".into(), "again".into()));
        assert!(matches!(
            PassageIndex::build(&dup, &embedder),
            Err(RetrievalError::DuplicateId(_))
        ));
        assert!(matches!(
            PassageIndex::build(&[], &embedder),
            Err(RetrievalError::EmptyCorpus)
        ));

        let mut repeated_text = docs.clone();
        repeated_text.push(("d".into(), "gamma".into()));
        assert_eq!(
            PassageIndex::build(&repeated_text, &embedder)
                .unwrap()
                .len(),
            3
        );
    }

    #[test]
    fn recall_cases() {
        let r = RankedResult {
            hits: vec![
                RankedHit {
                    passage_id: "p1".into(),
                    score: 2.0,
                },
                RankedHit {
                    passage_id: "p3".into(),
                    score: 1.0,
                },
            ],
        };
        let set = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(recall_at_k(&r, &set(&["p1"])).unwrap(), 1.0);
        assert_eq!(recall_at_k(&r, &set(&["p1", "p2"])).unwrap(), 0.5);
        assert!(matches!(
            recall_at_k(&r, &BTreeSet::new()),
            Err(RetrievalError::EmptyRelevant)
        ));
    }
}
