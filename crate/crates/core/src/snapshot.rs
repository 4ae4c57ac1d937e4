//! Versioned binary snapshots of one domain's corpus and indices.
//!
//! Layout (little endian): the 8-byte magic `CVRGSNAP`, a `u32` format
//! version, then the domain name, stopword list, passages, BM25 parameters
//! with document lengths and postings, and finally the dense matrix. Strings
//! are `u32` length-prefixed UTF-8.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::corpus::{Corpus, Domain, Passage};
use crate::dense::{DenseIndex, ZeroVectorPolicy};
use crate::lexical::{Bm25Params, InvertedIndex, Posting, Stopwords};

pub const MAGIC: &[u8; 8] = b"CVRGSNAP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: not an index snapshot (bad magic header)")]
    BadMagic { path: String },
    #[error("{path}: snapshot format version {found} is not supported (expected {expected})")]
    Version { path: String, found: u32, expected: u32 },
    #[error("{path}: corrupt snapshot: {message}")]
    Corrupt { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Everything needed to serve one domain without re-indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSnapshot {
    pub corpus: Corpus,
    pub stopwords: Stopwords,
    pub lexical: InvertedIndex,
    pub dense: DenseIndex,
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = r.read_u32::<LE>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

impl DomainSnapshot {
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        write_str(w, self.corpus.domain().as_str())?;

        let stopwords = self.stopwords.sorted();
        w.write_u32::<LE>(stopwords.len() as u32)?;
        for s in stopwords {
            write_str(w, s)?;
        }

        w.write_u64::<LE>(self.corpus.len() as u64)?;
        for p in self.corpus.iter() {
            write_str(w, &p.id)?;
            write_str(w, &p.doc_id)?;
            write_str(w, &p.text)?;
        }

        let params = self.lexical.params();
        w.write_f64::<LE>(params.k1)?;
        w.write_f64::<LE>(params.b)?;
        for &len in self.lexical.doc_lengths() {
            w.write_u32::<LE>(len)?;
        }
        let terms = self.lexical.terms();
        w.write_u64::<LE>(terms.len() as u64)?;
        for term in terms {
            let list = self.lexical.postings(term).unwrap_or_default();
            write_str(w, term)?;
            w.write_u32::<LE>(list.len() as u32)?;
            for p in list {
                w.write_u32::<LE>(p.position)?;
                w.write_u32::<LE>(p.tf)?;
            }
        }

        w.write_u8(match self.dense.policy() {
            ZeroVectorPolicy::Reject => 0,
            ZeroVectorPolicy::KeepZero => 1,
        })?;
        w.write_u64::<LE>(self.dense.dim() as u64)?;
        w.write_u64::<LE>(self.dense.len() as u64)?;
        for &x in self.dense.matrix() {
            w.write_f64::<LE>(x)?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SnapshotError> {
        let path = path.as_ref();
        let io = |source| SnapshotError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SnapshotError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = File::open(path).map_err(|source| SnapshotError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::read_from(&mut BufReader::new(file), &shown)
    }

    pub fn read_from<R: Read>(r: &mut R, source_name: &str) -> Result<Self, SnapshotError> {
        let corrupt = |message: String| SnapshotError::Corrupt {
            path: source_name.to_string(),
            message,
        };
        let io = |e: std::io::Error| corrupt(e.to_string());

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| SnapshotError::BadMagic {
            path: source_name.to_string(),
        })?;
        if &magic != MAGIC {
            return Err(SnapshotError::BadMagic {
                path: source_name.to_string(),
            });
        }
        let version = r.read_u32::<LE>().map_err(io)?;
        if version != FORMAT_VERSION {
            return Err(SnapshotError::Version {
                path: source_name.to_string(),
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let domain = Domain::new(read_str(r).map_err(io)?).map_err(|e| corrupt(e.to_string()))?;

        let n_stop = r.read_u32::<LE>().map_err(io)?;
        let mut stop_text = String::new();
        for _ in 0..n_stop {
            stop_text.push_str(&read_str(r).map_err(io)?);
            stop_text.push('\n');
        }
        let stopwords = Stopwords::parse(&stop_text);

        let n = r.read_u64::<LE>().map_err(io)? as usize;
        let mut passages = Vec::with_capacity(n);
        for _ in 0..n {
            passages.push(Passage {
                id: read_str(r).map_err(io)?,
                doc_id: read_str(r).map_err(io)?,
                text: read_str(r).map_err(io)?,
                domain: domain.clone(),
            });
        }
        let corpus = Corpus::from_passages(domain, passages).map_err(|e| corrupt(e.to_string()))?;
        let passage_ids: Vec<String> = corpus.iter().map(|p| p.id.clone()).collect();

        let params = Bm25Params {
            k1: r.read_f64::<LE>().map_err(io)?,
            b: r.read_f64::<LE>().map_err(io)?,
        };
        let mut doc_lengths = Vec::with_capacity(n);
        for _ in 0..n {
            doc_lengths.push(r.read_u32::<LE>().map_err(io)?);
        }
        let n_terms = r.read_u64::<LE>().map_err(io)? as usize;
        let mut postings = HashMap::with_capacity(n_terms);
        for _ in 0..n_terms {
            let term = read_str(r).map_err(io)?;
            let len = r.read_u32::<LE>().map_err(io)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let position = r.read_u32::<LE>().map_err(io)?;
                let tf = r.read_u32::<LE>().map_err(io)?;
                if position as usize >= n {
                    return Err(corrupt(format!("posting position {position} out of range")));
                }
                list.push(Posting { position, tf });
            }
            postings.insert(term, list);
        }
        let lexical = InvertedIndex::from_parts(postings, doc_lengths, passage_ids.clone(), params);

        let policy = match r.read_u8().map_err(io)? {
            0 => ZeroVectorPolicy::Reject,
            1 => ZeroVectorPolicy::KeepZero,
            other => return Err(corrupt(format!("unknown zero-vector policy tag {other}"))),
        };
        let dim = r.read_u64::<LE>().map_err(io)? as usize;
        let rows = r.read_u64::<LE>().map_err(io)? as usize;
        if rows != n {
            return Err(corrupt(format!("dense index has {rows} rows for {n} passages")));
        }
        let mut matrix = Vec::with_capacity(rows * dim);
        for _ in 0..rows * dim {
            matrix.push(r.read_f64::<LE>().map_err(io)?);
        }
        let dense = DenseIndex::from_parts(dim, passage_ids, matrix, policy).map_err(|e| corrupt(e.to_string()))?;

        Ok(Self {
            corpus,
            stopwords,
            lexical,
            dense,
        })
    }
}
