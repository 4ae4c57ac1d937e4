//! Tokenization and BM25 over an in-memory inverted index.
//!
//! Scoring is the Lucene-style variant:
//!
//! ```text
//! idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(q, d) = Σ_{t ∈ unique(q)} idf(t) · tf·(k1 + 1) / (tf + k1·(1 - b + b·dl/avgdl))
//! ```
//!
//! The idf is always positive, so any passage sharing a term with the query
//! scores above zero and passages with no shared term are never returned.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::fusion::{RankedList, ScoredPassage};

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid BM25 parameters k1={k1}, b={b}: need k1 >= 0 and 0 <= b <= 1")]
    InvalidParams { k1: f64, b: f64 },
    #[error("passage position {position} out of range for index of {num_docs} passages")]
    PositionOutOfRange { position: usize, num_docs: usize },
}

/// A set of lowercase tokens removed during tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// One token per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LexicalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| LexicalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Members in sorted order.
    pub fn sorted(&self) -> Vec<&str> {
        let mut words: Vec<&str> = self.0.iter().map(String::as_str).collect();
        words.sort_unstable();
        words
    }
}

/// Lowercased, stopword-free tokens in text order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenList(Vec<String>);

impl TokenList {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distinct tokens in first-occurrence order.
    pub fn unique(&self) -> Vec<&str> {
        let mut seen = HashSet::with_capacity(self.0.len());
        self.0.iter().map(String::as_str).filter(|t| seen.insert(*t)).collect()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenList {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(
            iter.into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }
}

/// Splits on runs of non-alphanumeric characters, lowercases, and drops
/// stopwords. No stemming.
#[derive(Debug, Clone, Default)]
pub struct Tokenizer {
    stopwords: Stopwords,
}

impl Tokenizer {
    pub fn new(stopwords: Stopwords) -> Self {
        Self { stopwords }
    }

    pub fn english() -> Self {
        Self::new(Stopwords::english())
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    pub fn tokenize(&self, text: &str) -> TokenList {
        TokenList(
            split_words(text)
                .map(str::to_lowercase)
                .filter(|t| !self.stopwords.contains(t))
                .collect(),
        )
    }
}

/// Maximal alphanumeric runs of `text`.
pub(crate) fn split_words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), LexicalError> {
        if self.k1.is_finite() && self.k1 >= 0.0 && (0.0..=1.0).contains(&self.b) {
            Ok(())
        } else {
            Err(LexicalError::InvalidParams { k1: self.k1, b: self.b })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub position: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    passage_ids: Vec<String>,
    avg_doc_length: f64,
    params: Bm25Params,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus, tokenizer: &Tokenizer, params: Bm25Params) -> Result<Self, LexicalError> {
        params.validate()?;
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut passage_ids = Vec::with_capacity(corpus.len());
        let mut counts: HashMap<String, u32> = HashMap::new();
        for (position, passage) in corpus.iter().enumerate() {
            let tokens = tokenizer.tokenize(&passage.text);
            counts.clear();
            for t in tokens.0 {
                *counts.entry(t).or_insert(0) += 1;
            }
            let mut len = 0u32;
            for (term, tf) in counts.drain() {
                len += tf;
                postings.entry(term).or_default().push(Posting {
                    position: position as u32,
                    tf,
                });
            }
            doc_lengths.push(len);
            passage_ids.push(passage.id.clone());
        }
        Ok(Self::from_parts(postings, doc_lengths, passage_ids, params))
    }

    /// Assembles an index from raw parts (used by snapshot loading).
    /// Posting lists are sorted by position here.
    pub fn from_parts(
        mut postings: HashMap<String, Vec<Posting>>,
        doc_lengths: Vec<u32>,
        passage_ids: Vec<String>,
        params: Bm25Params,
    ) -> Self {
        for list in postings.values_mut() {
            list.sort_unstable_by_key(|p| p.position);
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        Self {
            postings,
            doc_lengths,
            passage_ids,
            avg_doc_length,
            params,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passage_ids
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    /// All indexed terms in sorted order.
    pub fn terms(&self) -> Vec<&str> {
        let mut terms: Vec<&str> = self.postings.keys().map(String::as_str).collect();
        terms.sort_unstable();
        terms
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.num_docs() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = 1.0 - b + b * f64::from(doc_len) / self.avg_doc_length;
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one passage. Repeated query terms count once.
    pub fn score(&self, query: &TokenList, position: usize) -> Result<f64, LexicalError> {
        if position >= self.num_docs() {
            return Err(LexicalError::PositionOutOfRange {
                position,
                num_docs: self.num_docs(),
            });
        }
        let mut score = 0.0;
        for term in query.unique() {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            if let Ok(i) = list.binary_search_by_key(&(position as u32), |p| p.position) {
                let idf = self.idf(list.len());
                score += self.term_weight(idf, list[i].tf, self.doc_lengths[position]);
            }
        }
        Ok(score)
    }

    /// Top-`k` passages by BM25, term-at-a-time. Zero scores are dropped.
    pub fn search(&self, query: &TokenList, k: usize) -> RankedList {
        if k == 0 || self.num_docs() == 0 {
            return RankedList::empty("bm25");
        }
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in query.unique() {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for p in list {
                let w = self.term_weight(idf, p.tf, self.doc_lengths[p.position as usize]);
                *acc.entry(p.position).or_insert(0.0) += w;
            }
        }
        let entries = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(pos, s)| ScoredPassage::new(self.passage_ids[pos as usize].clone(), s))
            .collect();
        RankedList::from_unsorted("bm25", entries, Some(k))
    }
}
