//! Cross-encoder reranking of the fused candidate pool.
//!
//! Only the top `pool_size` fused candidates are scored. Their fused scores
//! are discarded; the final order is the scorer's, ties by ascending id.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::fusion::{RankedList, ScoredPassage};
use crate::lexical::Tokenizer;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("candidate passage {0:?} not found in corpus")]
    UnknownPassage(String),
    #[error("invalid rerank config: {0}")]
    Config(String),
    #[error("scorer returned {found} scores for {expected} passages")]
    ScoreCount { expected: usize, found: usize },
    #[error("scorer returned a NaN score")]
    NanScore,
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Response(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub pool_size: usize,
    pub output_size: usize,
    pub batch_size: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            pool_size: 50,
            output_size: 10,
            batch_size: 8,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.pool_size == 0 || self.output_size == 0 || self.batch_size == 0 {
            return Err(RerankError::Config(
                "pool_size, output_size and batch_size must be positive".into(),
            ));
        }
        if self.output_size > self.pool_size {
            return Err(RerankError::Config(format!(
                "output_size {} exceeds pool_size {}",
                self.output_size, self.pool_size
            )));
        }
        Ok(())
    }
}

/// Joint query-passage relevance scorer.
pub trait RerankScorer: Send + Sync {
    /// One score per passage, in input order.
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ScorerError>;
}

impl<S: RerankScorer + ?Sized> RerankScorer for Arc<S> {
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_pairs(query, passages)
    }
}

/// Token-overlap stand-in for a cross-encoder:
/// `|tokens(q) ∩ tokens(p)| / |tokens(q)|` over distinct tokens, 0 for an
/// empty query.
#[derive(Debug, Clone, Default)]
pub struct OverlapScorer {
    tokenizer: Tokenizer,
}

impl OverlapScorer {
    pub fn new(tokenizer: Tokenizer) -> Self {
        Self { tokenizer }
    }

    pub fn score(&self, query: &str, passage: &str) -> f64 {
        let q = self.tokenizer.tokenize(query);
        let q: HashSet<&str> = q.unique().into_iter().collect();
        if q.is_empty() {
            return 0.0;
        }
        let p = self.tokenizer.tokenize(passage);
        let p: HashSet<&str> = p.tokens().iter().map(String::as_str).collect();
        q.intersection(&p).count() as f64 / q.len() as f64
    }
}

impl RerankScorer for OverlapScorer {
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ScorerError> {
        Ok(passages.iter().map(|p| self.score(query, p)).collect())
    }
}

/// Counts calls and scored passages of an inner scorer.
#[derive(Debug, Default)]
pub struct CountingScorer<S> {
    inner: S,
    calls: AtomicUsize,
    pairs: AtomicUsize,
}

impl<S: RerankScorer> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            pairs: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn pairs(&self) -> usize {
        self.pairs.load(Ordering::SeqCst)
    }
}

impl<S: RerankScorer> RerankScorer for CountingScorer<S> {
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ScorerError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.pairs.fetch_add(passages.len(), Ordering::SeqCst);
        self.inner.score_pairs(query, passages)
    }
}

/// Rescores the top `pool_size` candidates and keeps the best `output_size`.
pub fn rerank(
    query: &str,
    candidates: &RankedList,
    corpus: &Corpus,
    scorer: &dyn RerankScorer,
    config: &RerankConfig,
) -> Result<RankedList, RerankError> {
    config.validate()?;
    let pool = &candidates.entries()[..candidates.len().min(config.pool_size)];
    let texts = pool
        .iter()
        .map(|c| {
            corpus
                .by_id(&c.id)
                .map(|p| p.text.as_str())
                .ok_or_else(|| RerankError::UnknownPassage(c.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut scores = Vec::with_capacity(pool.len());
    for batch in texts.chunks(config.batch_size) {
        let got = scorer.score_pairs(query, batch)?;
        if got.len() != batch.len() {
            return Err(RerankError::ScoreCount {
                expected: batch.len(),
                found: got.len(),
            });
        }
        scores.extend(got);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RerankError::NanScore);
    }
    let entries = pool
        .iter()
        .zip(scores)
        .map(|(c, s)| ScoredPassage::new(c.id.clone(), s))
        .collect();
    Ok(RankedList::from_unsorted("rerank", entries, Some(config.output_size)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, Passage};

    fn setup(n: usize) -> (Corpus, RankedList) {
        let d = Domain::new("t").unwrap();
        let passages: Vec<Passage> = (0..n)
            .map(|i| Passage {
                id: format!("p{i:02}"),
                doc_id: "d".into(),
                text: format!("topic{} shared words number{i}", i % 7),
                domain: d.clone(),
            })
            .collect();
        let fused = RankedList::new(
            "rrf",
            passages
                .iter()
                .enumerate()
                .map(|(i, p)| ScoredPassage::new(p.id.clone(), 1.0 / (61 + i) as f64))
                .collect(),
        )
        .unwrap();
        (Corpus::from_passages(d, passages).unwrap(), fused)
    }

    #[test]
    fn output_is_subset_of_pool() {
        let (corpus, fused) = setup(50);
        let out = rerank(
            "topic3 words",
            &fused,
            &corpus,
            &OverlapScorer::default(),
            &RerankConfig::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 10);
        let input: HashSet<&str> = fused.ids().collect();
        assert!(out.ids().all(|id| input.contains(id)));
        assert_eq!(out.source, "rerank");
    }

    #[test]
    fn exact_text_match_ranks_first() {
        let (corpus, fused) = setup(20);
        let target = corpus.get(13).unwrap().text.clone();
        let out = rerank(
            &target,
            &fused,
            &corpus,
            &OverlapScorer::default(),
            &RerankConfig::default(),
        )
        .unwrap();
        assert_eq!(out.entries()[0].id, "p13");
        assert_eq!(out.entries()[0].score, 1.0);
    }

    #[test]
    fn only_pool_is_scored() {
        let (corpus, fused) = setup(50);
        let scorer = CountingScorer::new(OverlapScorer::default());
        let cfg = RerankConfig {
            pool_size: 5,
            output_size: 5,
            batch_size: 2,
        };
        let out = rerank("words", &fused, &corpus, &scorer, &cfg).unwrap();
        assert_eq!(scorer.pairs(), 5);
        assert_eq!(scorer.calls(), 3);
        let pool: HashSet<&str> = fused.ids().take(5).collect();
        assert!(out.ids().all(|id| pool.contains(id)));
    }

    #[test]
    fn unknown_candidate_is_named() {
        let (corpus, _) = setup(3);
        let fused = RankedList::new("rrf", vec![ScoredPassage::new("ghost", 1.0)]).unwrap();
        match rerank(
            "q",
            &fused,
            &corpus,
            &OverlapScorer::default(),
            &RerankConfig::default(),
        ) {
            Err(RerankError::UnknownPassage(id)) => assert_eq!(id, "ghost"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(RerankConfig {
            output_size: 60,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RerankConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn empty_query_scores_zero() {
        assert_eq!(
            OverlapScorer::new(Tokenizer::english()).score("what is it", "anything"),
            0.0
        );
    }
}
