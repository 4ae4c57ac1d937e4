//! Exact inner-product search over L2-normalized embeddings.
//!
//! Vectors come from an [`EmbeddingProvider`]; the index itself never runs a
//! model. Search is an exhaustive scan, so results are exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Passage};
use crate::fusion::{RankedList, ScoredPassage};
use crate::lexical::split_words;

pub const DEFAULT_DIM: usize = 768;

/// Rows scanned per parallel task.
const SCAN_CHUNK: usize = 4096;
/// Passages per provider call while building.
const EMBED_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("passage {id:?}: embedding has dimension {found}, expected {expected}")]
    PassageDimension { id: String, expected: usize, found: usize },
    #[error("passage {id:?}: {source}")]
    Passage {
        id: String,
        #[source]
        source: Box<DenseError>,
    },
    #[error("embedding provider returned {found} vectors for {expected} inputs")]
    CountMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no stored embedding for key {0:?}")]
    MissingKey(String),
    #[error("{path}: line {line}: {message}")]
    StoreParse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("remote provider: {0}")]
    Remote(String),
}

/// What [`normalize`] does with an all-zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroVectorPolicy {
    #[default]
    Reject,
    /// Keep the zero vector; it scores 0 against everything.
    KeepZero,
}

pub fn normalize(v: &[f64], policy: ZeroVectorPolicy) -> Result<Vec<f64>, DenseError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return match policy {
            ZeroVectorPolicy::KeepZero if norm == 0.0 => Ok(vec![0.0; v.len()]),
            _ => Err(DenseError::ZeroVector),
        };
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Source of embedding vectors for passages and queries.
///
/// Implementations must return the same vector for the same input.
pub trait EmbeddingProvider: Send + Sync {
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError>;

    /// Embeds passages; the default embeds their text.
    fn embed_passages(&self, passages: &[&Passage]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let texts: Vec<&str> = passages.iter().map(|p| p.text.as_str()).collect();
        self.embed_texts(&texts)
    }
}

/// Deterministic, model-free embedder: feature-hashed token counts.
///
/// Tokens are lowercased alphanumeric runs (no stopword removal), each hashed
/// into one of `dim` buckets with seeded FNV-1a. Identical texts therefore get
/// identical vectors and cosine similarity 1.0.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn bucket(&self, token: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for byte in token.bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        (h % self.dim as u64) as usize
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for word in split_words(text) {
            v[self.bucket(&word.to_lowercase())] += 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

/// Precomputed vectors loaded from JSONL `{"key": ..., "vector": [...]}`.
///
/// Passages are looked up by id, queries by their exact text.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct StoreRecord {
    key: String,
    vector: Vec<f64>,
}

impl EmbeddingStore {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = File::open(path).map_err(|source| ProviderError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut vectors = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| ProviderError::Io {
                path: shown.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StoreRecord = serde_json::from_str(&line).map_err(|e| ProviderError::StoreParse {
                path: shown.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            vectors.insert(rec.key, rec.vector);
        }
        Ok(Self { vectors })
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f64>) {
        self.vectors.insert(key.into(), vector);
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn lookup(&self, key: &str) -> Result<Vec<f64>, ProviderError> {
        self.vectors
            .get(key)
            .cloned()
            .ok_or_else(|| ProviderError::MissingKey(key.to_string()))
    }
}

impl EmbeddingProvider for EmbeddingStore {
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        texts.iter().map(|t| self.lookup(t)).collect()
    }

    fn embed_passages(&self, passages: &[&Passage]) -> Result<Vec<Vec<f64>>, ProviderError> {
        passages.iter().map(|p| self.lookup(&p.id)).collect()
    }
}

/// Row-major matrix of unit-norm passage vectors in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    passage_ids: Vec<String>,
    matrix: Vec<f64>,
    policy: ZeroVectorPolicy,
}

impl DenseIndex {
    /// Embeds and normalizes every passage. The expected dimension is `dim`
    /// when given, otherwise that of the first passage.
    pub fn build(
        corpus: &Corpus,
        provider: &dyn EmbeddingProvider,
        dim: Option<usize>,
        policy: ZeroVectorPolicy,
    ) -> Result<Self, DenseError> {
        let mut expected = dim;
        let mut matrix = Vec::new();
        let mut passage_ids = Vec::with_capacity(corpus.len());
        let passages: Vec<&Passage> = corpus.iter().collect();
        for batch in passages.chunks(EMBED_BATCH) {
            let vectors = provider.embed_passages(batch)?;
            if vectors.len() != batch.len() {
                return Err(DenseError::CountMismatch {
                    expected: batch.len(),
                    found: vectors.len(),
                });
            }
            for (passage, v) in batch.iter().zip(vectors) {
                let want = *expected.get_or_insert(v.len());
                if v.len() != want {
                    return Err(DenseError::PassageDimension {
                        id: passage.id.clone(),
                        expected: want,
                        found: v.len(),
                    });
                }
                let unit = normalize(&v, policy).map_err(|e| DenseError::Passage {
                    id: passage.id.clone(),
                    source: Box::new(e),
                })?;
                matrix.extend_from_slice(&unit);
                passage_ids.push(passage.id.clone());
            }
        }
        Ok(Self {
            dim: expected.unwrap_or(0),
            passage_ids,
            matrix,
            policy,
        })
    }

    /// Assembles an index from stored rows (used by snapshot loading).
    pub fn from_parts(
        dim: usize,
        passage_ids: Vec<String>,
        matrix: Vec<f64>,
        policy: ZeroVectorPolicy,
    ) -> Result<Self, DenseError> {
        if matrix.len() != dim * passage_ids.len() {
            return Err(DenseError::DimensionMismatch {
                expected: dim * passage_ids.len(),
                found: matrix.len(),
            });
        }
        Ok(Self {
            dim,
            passage_ids,
            matrix,
            policy,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passage_ids.is_empty()
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passage_ids
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.matrix[position * self.dim..(position + 1) * self.dim]
    }

    pub fn policy(&self) -> ZeroVectorPolicy {
        self.policy
    }

    /// Top-`k` passages by inner product with the normalized query.
    pub fn search(&self, query: &[f64], k: usize) -> Result<RankedList, DenseError> {
        if self.is_empty() || k == 0 {
            return Ok(RankedList::empty("dense"));
        }
        if query.len() != self.dim {
            return Err(DenseError::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let q = normalize(query, self.policy)?;
        let scores: Vec<f64> = self
            .matrix
            .par_chunks(self.dim * SCAN_CHUNK)
            .flat_map_iter(|block| block.chunks_exact(self.dim).map(|row| dot(row, &q)))
            .collect();
        let entries = scores
            .into_iter()
            .zip(&self.passage_ids)
            .map(|(s, id)| ScoredPassage::new(id.clone(), s))
            .collect();
        Ok(RankedList::from_unsorted("dense", entries, Some(k)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;

    fn corpus(texts: &[&str]) -> Corpus {
        let d = Domain::new("t").unwrap();
        Corpus::from_passages(
            d.clone(),
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Passage {
                    id: format!("p{i}"),
                    doc_id: "d".into(),
                    text: t.to_string(),
                    domain: d.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[3.0, 4.0], ZeroVectorPolicy::Reject).unwrap(), [0.6, 0.8]);
        let unit = [0.6, 0.8];
        let again = normalize(&unit, ZeroVectorPolicy::Reject).unwrap();
        assert!(again.iter().zip(unit).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(matches!(
            normalize(&[0.0, 0.0], ZeroVectorPolicy::Reject),
            Err(DenseError::ZeroVector)
        ));
        assert_eq!(normalize(&[0.0, 0.0], ZeroVectorPolicy::KeepZero).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn build_rows_are_unit_norm() {
        let e = HashingEmbedder::new(16, 7);
        let idx = DenseIndex::build(
            &corpus(&["alpha beta", "beta gamma", "delta"]),
            &e,
            None,
            ZeroVectorPolicy::Reject,
        )
        .unwrap();
        assert_eq!((idx.len(), idx.dim()), (3, 16));
        for i in 0..3 {
            let n: f64 = idx.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    struct Ragged;
    impl EmbeddingProvider for Ragged {
        fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
            Ok(texts
                .iter()
                .enumerate()
                .map(|(i, _)| vec![1.0; if i == 0 { 768 } else { 512 }])
                .collect())
        }
    }

    #[test]
    fn dimension_mismatch_names_passage() {
        let err = DenseIndex::build(&corpus(&["a", "b"]), &Ragged, None, ZeroVectorPolicy::Reject).unwrap_err();
        match err {
            DenseError::PassageDimension { id, expected, found } => {
                assert_eq!((id.as_str(), expected, found), ("p1", 768, 512));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_corpus_searches_empty() {
        let e = HashingEmbedder::new(8, 0);
        let idx = DenseIndex::build(&corpus(&[]), &e, Some(8), ZeroVectorPolicy::Reject).unwrap();
        assert!(idx.search(&[1.0; 8], 5).unwrap().is_empty());
    }

    #[test]
    fn self_similarity_and_orthogonality() {
        let e = HashingEmbedder::new(64, 1);
        let idx = DenseIndex::build(
            &corpus(&["apple pie", "banana split", "cherry tart"]),
            &e,
            None,
            ZeroVectorPolicy::Reject,
        )
        .unwrap();
        let hits = idx.search(&e.embed("banana split"), 3).unwrap();
        assert_eq!(hits.entries()[0].id, "p1");
        assert!((hits.entries()[0].score - 1.0).abs() < 1e-6);

        let rows = DenseIndex::from_parts(
            2,
            vec!["b".into(), "a".into()],
            vec![1.0, 0.0, 1.0, 0.0],
            ZeroVectorPolicy::Reject,
        )
        .unwrap();
        let hits = rows.search(&[0.0, 1.0], 2).unwrap();
        assert_eq!(hits.ids().collect::<Vec<_>>(), ["a", "b"]);
        assert!(hits.entries().iter().all(|h| h.score == 0.0));
        assert!(rows.search(&[1.0, 0.0, 0.0], 2).is_err());
    }

    #[test]
    fn store_lookups() {
        let mut store = EmbeddingStore::default();
        store.insert("p0", vec![1.0, 0.0]);
        store.insert("what is x", vec![0.0, 1.0]);
        assert_eq!(store.embed_texts(&["what is x"]).unwrap(), [vec![0.0, 1.0]]);
        assert!(matches!(
            store.embed_texts(&["nope"]),
            Err(ProviderError::MissingKey(_))
        ));
        let idx = DenseIndex::build(&corpus(&["whatever"]), &store, Some(2), ZeroVectorPolicy::Reject).unwrap();
        assert_eq!(idx.row(0), [1.0, 0.0]);
    }
}
