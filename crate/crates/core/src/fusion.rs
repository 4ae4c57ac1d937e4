//! Ranked lists and Reciprocal Rank Fusion.
//!
//! A passage `d` appearing in a set of input rankings receives
//!
//! ```text
//! score(d) = Σ_r 1 / (k + rank_r(d))
//! ```
//!
//! where `rank_r(d)` is its 1-based position in ranking `r`. Rankings that do
//! not contain `d` contribute nothing. Only ranks are read; input scores are
//! ignored.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RRF_K: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("RRF needs at least one input list")]
    NoInputs,
    #[error("RRF k must be a positive finite number, got {0}")]
    InvalidK(f64),
    #[error("ranked list {tag:?} is invalid: {reason}")]
    InvalidList { tag: String, reason: String },
}

/// One `(passage id, score)` pair of a ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub id: String,
    pub score: f64,
}

impl ScoredPassage {
    pub fn new(id: impl Into<String>, score: f64) -> Self {
        Self { id: id.into(), score }
    }
}

/// Ordering used by every ranking stage: score descending, then passage id
/// ascending.
pub fn rank_order(a_id: &str, a_score: f64, b_id: &str, b_score: f64) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// Output of any retrieval stage, labelled by its source
/// (`bm25`, `dense`, `rrf`, `rerank`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub source: String,
    entries: Vec<ScoredPassage>,
}

impl RankedList {
    /// Validates that scores are non-increasing and ids unique.
    pub fn new(source: impl Into<String>, entries: Vec<ScoredPassage>) -> Result<Self, FusionError> {
        let list = Self {
            source: source.into(),
            entries,
        };
        list.validate()?;
        Ok(list)
    }

    /// Sorts arbitrary entries with [`rank_order`] and truncates to `limit`.
    ///
    /// Callers must supply unique ids.
    pub fn from_unsorted(source: impl Into<String>, mut entries: Vec<ScoredPassage>, limit: Option<usize>) -> Self {
        let cmp = |a: &ScoredPassage, b: &ScoredPassage| rank_order(&a.id, a.score, &b.id, b.score);
        if let Some(limit) = limit {
            if limit < entries.len() {
                if limit == 0 {
                    entries.clear();
                } else {
                    entries.select_nth_unstable_by(limit - 1, cmp);
                    entries.truncate(limit);
                }
            }
        }
        entries.sort_unstable_by(cmp);
        Self {
            source: source.into(),
            entries,
        }
    }

    pub fn empty(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            entries: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            if e.score.is_nan() {
                return Err(self.invalid(format!("NaN score at position {}", i + 1)));
            }
            if i > 0 && e.score > self.entries[i - 1].score {
                return Err(self.invalid(format!("score increases at position {}", i + 1)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(self.invalid(format!("duplicate passage id {:?}", e.id)));
            }
        }
        Ok(())
    }

    fn invalid(&self, reason: String) -> FusionError {
        FusionError::InvalidList {
            tag: self.source.clone(),
            reason,
        }
    }

    pub fn entries(&self) -> &[ScoredPassage] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ScoredPassage> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrfConfig {
    pub k: f64,
}

impl Default for RrfConfig {
    fn default() -> Self {
        Self { k: DEFAULT_RRF_K }
    }
}

impl RrfConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.k.is_finite() && self.k > 0.0 {
            Ok(())
        } else {
            Err(FusionError::InvalidK(self.k))
        }
    }
}

/// Fuses any number of rankings. The result holds the union of all input ids,
/// untruncated, sorted by fused score with ties broken by ascending id.
pub fn rrf_fuse(lists: &[RankedList], config: &RrfConfig) -> Result<RankedList, FusionError> {
    config.validate()?;
    if lists.is_empty() {
        return Err(FusionError::NoInputs);
    }
    let capacity = lists.iter().map(RankedList::len).max().unwrap_or(0);
    let mut scores: HashMap<&str, f64> = HashMap::with_capacity(capacity * 2);
    for list in lists {
        list.validate()?;
        for (i, entry) in list.entries.iter().enumerate() {
            let contribution = 1.0 / (config.k + (i + 1) as f64);
            *scores.entry(entry.id.as_str()).or_insert(0.0) += contribution;
        }
    }
    let entries = scores
        .into_iter()
        .map(|(id, score)| ScoredPassage::new(id, score))
        .collect();
    Ok(RankedList::from_unsorted("rrf", entries, None))
}
