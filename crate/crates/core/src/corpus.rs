//! Passage corpora partitioned by domain.
//!
//! A corpus is loaded from JSON Lines, one passage per line:
//!
//! ```text
//! {"id": "p1", "doc_id": "d1", "text": "...", "domain": "cloud"}
//! ```
//!
//! Unknown extra fields are ignored. Iteration order is ingestion order and
//! every passage position doubles as the row/document number in the lexical
//! and dense indices.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid domain name {0:?}: must be non-empty, lowercase, without whitespace")]
    InvalidDomain(String),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("duplicate passage id {0:?}")]
    DuplicateId(String),
    #[error("passage {0:?} has empty text")]
    EmptyText(String),
    #[error("passage {id:?} belongs to domain {found:?}, expected {expected:?}")]
    DomainMismatch {
        id: String,
        found: String,
        expected: String,
    },
    #[error("chunk size must be positive and larger than the overlap (chunk={chunk}, overlap={overlap})")]
    ChunkConfig { chunk: usize, overlap: usize },
    #[error("cannot chunk empty document {0:?}")]
    EmptyDocument(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Corpus partition name such as `clapnq` or `cloud`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Domain(String);

impl Domain {
    pub const CLAPNQ: &'static str = "clapnq";
    pub const CLOUD: &'static str = "cloud";
    pub const FIQA: &'static str = "fiqa";
    pub const GOVT: &'static str = "govt";

    /// The four benchmark domains in canonical (alphabetical) order.
    pub const CANONICAL: [&'static str; 4] = [Self::CLAPNQ, Self::CLOUD, Self::FIQA, Self::GOVT];

    pub fn new(name: impl Into<String>) -> Result<Self, CorpusError> {
        let name = name.into();
        let valid =
            !name.is_empty() && !name.chars().any(char::is_whitespace) && name.chars().all(|c| !c.is_uppercase());
        if valid {
            Ok(Self(name))
        } else {
            Err(CorpusError::InvalidDomain(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Domain {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Domain> for String {
    fn from(value: Domain) -> Self {
        value.0
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for Domain {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// One retrieval unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub doc_id: String,
    pub text: String,
    pub domain: Domain,
}

/// An immutable, in-memory passage collection for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    domain: Domain,
    passages: Vec<Passage>,
    index_of: HashMap<String, usize>,
}

impl Corpus {
    pub fn empty(domain: Domain) -> Self {
        Self {
            domain,
            passages: Vec::new(),
            index_of: HashMap::new(),
        }
    }

    /// Builds a corpus, validating id uniqueness, non-empty text and domain.
    pub fn from_passages(domain: Domain, passages: Vec<Passage>) -> Result<Self, CorpusError> {
        let mut corpus = Self::empty(domain);
        corpus.passages.reserve(passages.len());
        for p in passages {
            corpus.push(p)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, passage: Passage) -> Result<(), CorpusError> {
        if passage.text.trim().is_empty() {
            return Err(CorpusError::EmptyText(passage.id));
        }
        if passage.domain != self.domain {
            return Err(CorpusError::DomainMismatch {
                id: passage.id,
                found: passage.domain.0,
                expected: self.domain.0.clone(),
            });
        }
        if self.index_of.contains_key(&passage.id) {
            return Err(CorpusError::DuplicateId(passage.id));
        }
        self.index_of.insert(passage.id.clone(), self.passages.len());
        self.passages.push(passage);
        Ok(())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn get(&self, position: usize) -> Option<&Passage> {
        self.passages.get(position)
    }

    /// Position of a passage id in ingestion order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.index_of.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&Passage> {
        self.position(id).map(|pos| &self.passages[pos])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Passage> {
        self.passages.iter()
    }

    /// Serializes the corpus as JSON Lines in ingestion order.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for p in &self.passages {
            serde_json::to_writer(&mut writer, p)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Passage;
    type IntoIter = std::slice::Iter<'a, Passage>;

    fn into_iter(self) -> Self::IntoIter {
        self.passages.iter()
    }
}

#[derive(Deserialize)]
struct PassageRecord {
    id: String,
    doc_id: String,
    text: String,
    domain: String,
}

/// Loads a JSONL corpus file for `domain`.
pub fn load_corpus(path: impl AsRef<Path>, domain: Domain) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(BufReader::new(file), domain, &path.display().to_string())
}

/// Reads a JSONL corpus from any buffered reader. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R, domain: Domain, source_name: &str) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::empty(domain);
    for (i, line) in reader.lines().enumerate() {
        let parse_err = |message: String| CorpusError::Parse {
            path: source_name.to_string(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PassageRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let passage_domain = Domain::new(record.domain).map_err(|e| parse_err(e.to_string()))?;
        corpus.push(Passage {
            id: record.id,
            doc_id: record.doc_id,
            text: record.text,
            domain: passage_domain,
        })?;
    }
    Ok(corpus)
}

/// Splits a document into overlapping windows of whitespace tokens.
///
/// Consecutive windows share exactly `overlap_tokens` tokens; the last window
/// ends at the final token. Passage ids are `{doc_id}-{ordinal}`.
pub fn chunk_document(
    doc_id: &str,
    text: &str,
    chunk_tokens: usize,
    overlap_tokens: usize,
    domain: &Domain,
) -> Result<Vec<Passage>, CorpusError> {
    if chunk_tokens == 0 || overlap_tokens >= chunk_tokens {
        return Err(CorpusError::ChunkConfig {
            chunk: chunk_tokens,
            overlap: overlap_tokens,
        });
    }
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(CorpusError::EmptyDocument(doc_id.to_string()));
    }
    let stride = chunk_tokens - overlap_tokens;
    let mut passages = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + chunk_tokens).min(tokens.len());
        passages.push(Passage {
            id: format!("{doc_id}-{}", passages.len()),
            doc_id: doc_id.to_string(),
            text: tokens[start..end].join(" "),
            domain: domain.clone(),
        });
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    Ok(passages)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> Domain {
        Domain::new("cloud").unwrap()
    }

    fn line(id: &str) -> String {
        format!(r#"{{"id":"{id}","doc_id":"d","text":"text of {id}","domain":"cloud"}}"#)
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::new("clapnq").is_ok());
        assert!(Domain::new("").is_err());
        assert!(Domain::new("Cloud").is_err());
        assert!(Domain::new("my domain").is_err());
    }

    #[test]
    fn loads_in_order() {
        let data = [line("p1"), line("p2"), line("p3")].join("\n");
        let corpus = read_corpus(data.as_bytes(), cloud(), "mem").unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.position("p2"), Some(1));
        assert_eq!(corpus.get(2).unwrap().id, "p3");
    }

    #[test]
    fn duplicate_id_is_named() {
        let data = [line("p1"), line("p1")].join("\n");
        match read_corpus(data.as_bytes(), cloud(), "mem") {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "p1"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_valid() {
        let corpus = read_corpus(&b""[..], cloud(), "mem").unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let data = format!("{}\n{{not json\n", line("p1"));
        match read_corpus(data.as_bytes(), cloud(), "mem") {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn extra_fields_ignored_and_domain_checked() {
        let data = r#"{"id":"a","doc_id":"d","text":"x","domain":"cloud","title":"t"}"#;
        assert_eq!(read_corpus(data.as_bytes(), cloud(), "mem").unwrap().len(), 1);
        let data = r#"{"id":"a","doc_id":"d","text":"x","domain":"govt"}"#;
        assert!(matches!(
            read_corpus(data.as_bytes(), cloud(), "mem"),
            Err(CorpusError::DomainMismatch { .. })
        ));
    }

    #[test]
    fn blank_text_rejected() {
        let data = r#"{"id":"a","doc_id":"d","text":"   ","domain":"cloud"}"#;
        assert!(matches!(
            read_corpus(data.as_bytes(), cloud(), "mem"),
            Err(CorpusError::EmptyText(_))
        ));
    }

    #[test]
    fn chunk_ten_tokens() {
        let text = (0..10).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        let chunks = chunk_document("doc", &text, 4, 1, &cloud()).unwrap();
        let texts: Vec<&str> = chunks.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["t0 t1 t2 t3", "t3 t4 t5 t6", "t6 t7 t8 t9"]);
        assert_eq!(chunks[2].id, "doc-2");
    }

    #[test]
    fn chunk_exact_and_short() {
        let text = vec!["w"; 512].join(" ");
        assert_eq!(chunk_document("d", &text, 512, 100, &cloud()).unwrap().len(), 1);
        let chunks = chunk_document("d", "a b c", 512, 100, &cloud()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, "a b c");
    }

    #[test]
    fn chunk_config_errors() {
        assert!(matches!(
            chunk_document("d", "a b", 4, 4, &cloud()),
            Err(CorpusError::ChunkConfig { .. })
        ));
        assert!(matches!(
            chunk_document("d", "  ", 4, 1, &cloud()),
            Err(CorpusError::EmptyDocument(_))
        ));
    }
}
