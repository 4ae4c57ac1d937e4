//! TREC-style evaluation: qrels and run files, nDCG@k and Recall@k.
//!
//! Semantics follow `trec_eval`'s cutoff measures with linear gain:
//! `DCG@k = Σ_{i≤k} grade(d_i) / log2(i + 1)`, normalized by the DCG of the
//! judged grades sorted descending. Queries without any positive judgment are
//! excluded from scoring; judged queries absent from the run score zero.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Domain;
use crate::fusion::RankedList;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("run is invalid for query {query_id:?}: {reason}")]
    InvalidRun { query_id: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Graded judgments: query id → passage id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: impl Into<String>, passage_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into(), grade);
    }

    pub fn for_query(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Whether the query has at least one positive grade.
    pub fn is_answerable(&self, query_id: &str) -> bool {
        self.for_query(query_id).is_some_and(|j| j.values().any(|&g| g > 0))
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = File::open(path).map_err(|source| EvalError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::read(BufReader::new(file), &shown)
    }

    /// Parses `query_id iteration passage_id grade` lines.
    pub fn read<R: BufRead>(reader: R, source_name: &str) -> Result<Self, EvalError> {
        let mut qrels = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let err = |message: String| EvalError::Parse {
                path: source_name.to_string(),
                line: i + 1,
                message,
            };
            let line = line.map_err(|e| err(e.to_string()))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [qid, _iter, pid, grade] = fields[..] else {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            };
            let grade: u32 = grade
                .parse()
                .map_err(|_| err(format!("grade {grade:?} is not a non-negative integer")))?;
            qrels.insert(qid, pid, grade);
        }
        Ok(qrels)
    }
}

/// One line of a TREC run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub passage_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Converts a final ranked list into run entries with 1-based ranks.
pub fn run_entries(query_id: &str, list: &RankedList, tag: &str) -> Vec<RunEntry> {
    list.entries()
        .iter()
        .enumerate()
        .map(|(i, e)| RunEntry {
            query_id: query_id.to_string(),
            passage_id: e.id.clone(),
            rank: i + 1,
            score: e.score,
            tag: tag.to_string(),
        })
        .collect()
}

/// Writes `query_id Q0 passage_id rank score tag` lines in the given order.
pub fn write_run<W: Write>(entries: &[RunEntry], mut w: W) -> std::io::Result<()> {
    for e in entries {
        writeln!(w, "{} Q0 {} {} {} {}", e.query_id, e.passage_id, e.rank, e.score, e.tag)?;
    }
    w.flush()
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RunEntry>, EvalError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| EvalError::Io {
        path: shown.clone(),
        source,
    })?;
    read_run(BufReader::new(file), &shown)
}

pub fn read_run<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<RunEntry>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |message: String| EvalError::Parse {
            path: source_name.to_string(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [qid, _q0, pid, rank, score, tag] = fields[..] else {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        };
        out.push(RunEntry {
            query_id: qid.to_string(),
            passage_id: pid.to_string(),
            rank: rank.parse().map_err(|_| err(format!("bad rank {rank:?}")))?,
            score: score.parse().map_err(|_| err(format!("bad score {score:?}")))?,
            tag: tag.to_string(),
        });
    }
    Ok(out)
}

/// nDCG at cutoff `k` with linear gain. Returns 0 when nothing is relevant.
pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], judgments: &HashMap<String, u32>, k: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| f64::from(judgments.get(id.as_ref()).copied().unwrap_or(0)) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / ((i + 2) as f64).log2())
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// Fraction of relevant (grade > 0) passages found in the top `k`.
pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], judgments: &HashMap<String, u32>, k: usize) -> f64 {
    let relevant = judgments.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return 0.0;
    }
    let found = ranking
        .iter()
        .take(k)
        .filter(|id| judgments.get(id.as_ref()).is_some_and(|&g| g > 0))
        .count();
    found as f64 / relevant as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub recall10: f64,
}

impl QueryMetrics {
    pub fn compute<S: AsRef<str>>(ranking: &[S], judgments: &HashMap<String, u32>) -> Self {
        Self {
            ndcg5: ndcg_at_k(ranking, judgments, 5),
            ndcg10: ndcg_at_k(ranking, judgments, 10),
            recall10: recall_at_k(ranking, judgments, 10),
        }
    }
}

/// Unweighted means over a set of scored queries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub queries: usize,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub recall10: f64,
}

impl MetricMeans {
    fn from_queries<'a>(metrics: impl Iterator<Item = &'a QueryMetrics>) -> Self {
        let mut m = Self::default();
        for q in metrics {
            m.queries += 1;
            m.ndcg5 += q.ndcg5;
            m.ndcg10 += q.ndcg10;
            m.recall10 += q.recall10;
        }
        if m.queries > 0 {
            let n = m.queries as f64;
            m.ndcg5 /= n;
            m.ndcg10 /= n;
            m.recall10 /= n;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub per_domain: BTreeMap<String, MetricMeans>,
    pub overall: MetricMeans,
}

impl MetricReport {
    pub fn scored_queries(&self) -> usize {
        self.per_query.len()
    }

    fn rows(&self) -> Vec<(String, MetricMeans)> {
        let mut rows: Vec<(String, MetricMeans)> = self.per_domain.iter().map(|(d, m)| (d.clone(), *m)).collect();
        rows.push(("overall".to_string(), self.overall));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,queries,ndcg@5,ndcg@10,recall@10\n");
        for (scope, m) in self.rows() {
            let _ = writeln!(
                out,
                "{scope},{},{:.4},{:.4},{:.4}",
                m.queries, m.ndcg5, m.ndcg10, m.recall10
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let header = ["scope", "queries", "ndcg@5", "ndcg@10", "recall@10"]
            .map(String::from)
            .to_vec();
        let body = self
            .rows()
            .into_iter()
            .map(|(scope, m)| {
                vec![
                    scope,
                    m.queries.to_string(),
                    format!("{:.4}", m.ndcg5),
                    format!("{:.4}", m.ndcg10),
                    format!("{:.4}", m.recall10),
                ]
            })
            .collect::<Vec<_>>();
        align_table(&header, &body)
    }
}

/// Left-aligns the first column and right-aligns the rest.
pub fn align_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let fmt_row = |row: &[String]| {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = fmt_row(header);
    out.push('\n');
    let rule: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out
}

/// Groups a run by query and checks ranks are `1..n`, ids unique and scores
/// non-increasing. Returns passage ids in rank order.
pub fn validate_run(run: &[RunEntry]) -> Result<BTreeMap<String, Vec<String>>, EvalError> {
    let mut grouped: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
    for e in run {
        grouped.entry(e.query_id.as_str()).or_default().push(e);
    }
    let mut out = BTreeMap::new();
    for (qid, mut entries) in grouped {
        let invalid = |reason: String| EvalError::InvalidRun {
            query_id: qid.to_string(),
            reason,
        };
        entries.sort_by_key(|e| e.rank);
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(invalid(format!(
                    "ranks are not consecutive from 1 (found {} at position {})",
                    e.rank,
                    i + 1
                )));
            }
            if !seen.insert(e.passage_id.as_str()) {
                return Err(invalid(format!("duplicate passage id {:?}", e.passage_id)));
            }
            if i > 0 && e.score > entries[i - 1].score {
                return Err(invalid(format!("score increases at rank {}", e.rank)));
            }
        }
        out.insert(qid.to_string(), entries.iter().map(|e| e.passage_id.clone()).collect());
    }
    Ok(out)
}

/// Scores a run against qrels, aggregating per domain and overall.
///
/// Queries whose id is missing from `domains` count toward the overall mean
/// only.
pub fn evaluate_run(
    run: &[RunEntry],
    qrels: &Qrels,
    domains: &HashMap<String, Domain>,
) -> Result<MetricReport, EvalError> {
    let rankings = validate_run(run)?;
    let empty: Vec<String> = Vec::new();
    let mut per_query = BTreeMap::new();
    for qid in qrels.query_ids() {
        if !qrels.is_answerable(qid) {
            continue;
        }
        let judgments = qrels.for_query(qid).expect("query id came from qrels");
        let ranking = rankings.get(qid).unwrap_or(&empty);
        per_query.insert(qid.to_string(), QueryMetrics::compute(ranking, judgments));
    }
    let mut by_domain: BTreeMap<String, Vec<&QueryMetrics>> = BTreeMap::new();
    for (qid, m) in &per_query {
        if let Some(d) = domains.get(qid) {
            by_domain.entry(d.to_string()).or_default().push(m);
        }
    }
    let per_domain = by_domain
        .into_iter()
        .map(|(d, ms)| (d, MetricMeans::from_queries(ms.into_iter())))
        .collect();
    let overall = MetricMeans::from_queries(per_query.values());
    Ok(MetricReport {
        per_query,
        per_domain,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judg(pairs: &[(&str, u32)]) -> HashMap<String, u32> {
        pairs.iter().map(|(p, g)| (p.to_string(), *g)).collect()
    }

    #[test]
    fn ndcg_examples() {
        let j = judg(&[("a", 1), ("b", 1)]);
        assert_eq!(ndcg_at_k(&["a", "b", "c"], &j, 5), 1.0);
        let j = judg(&[("r", 1)]);
        let got = ndcg_at_k(&["x", "r"], &j, 5);
        assert!((got - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((got - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&["1", "2", "3", "4", "5", "r"], &j, 5), 0.0);
    }

    #[test]
    fn recall_examples() {
        let top: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        assert_eq!(recall_at_k(&top, &judg(&[("d1", 1), ("d7", 2)]), 10), 1.0);
        assert_eq!(
            recall_at_k(&top, &judg(&[("d1", 1), ("x", 1), ("y", 1), ("z", 1)]), 10),
            0.25
        );
        assert_eq!(recall_at_k(&top, &judg(&[("x", 1)]), 10), 0.0);
    }

    #[test]
    fn qrels_and_run_parsing() {
        let q = Qrels::read("q1 0 p1 1\nq1 0 p2 0\n\nq2 0 p9 2\n".as_bytes(), "mem").unwrap();
        assert!(q.is_answerable("q1") && q.is_answerable("q2"));
        assert!(matches!(
            Qrels::read("q1 0 p1 -1\n".as_bytes(), "mem"),
            Err(EvalError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Qrels::read("q1 p1 1\n".as_bytes(), "mem"),
            Err(EvalError::Parse { .. })
        ));

        let run = read_run("q1 Q0 p1 1 0.5 t\nq1 Q0 p2 2 0.25 t\n".as_bytes(), "mem").unwrap();
        let mut buf = Vec::new();
        write_run(&run, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "q1 Q0 p1 1 0.5 t\nq1 Q0 p2 2 0.25 t\n");
    }

    #[test]
    fn run_validation() {
        let e = |p: &str, r: usize, s: f64| RunEntry {
            query_id: "q".into(),
            passage_id: p.into(),
            rank: r,
            score: s,
            tag: "t".into(),
        };
        assert!(validate_run(&[e("a", 1, 1.0), e("b", 3, 0.5)]).is_err());
        assert!(validate_run(&[e("a", 1, 1.0), e("a", 2, 0.5)]).is_err());
        assert!(validate_run(&[e("a", 1, 1.0), e("b", 2, 2.0)]).is_err());
        assert!(validate_run(&[e("b", 2, 0.5), e("a", 1, 1.0)]).is_ok());
    }

    #[test]
    fn unjudged_queries_ignored_and_missing_score_zero() {
        let mut qrels = Qrels::default();
        qrels.insert("judged", "p1", 1);
        qrels.insert("unanswerable", "p1", 0);
        let run = vec![RunEntry {
            query_id: "other".into(),
            passage_id: "p1".into(),
            rank: 1,
            score: 1.0,
            tag: "t".into(),
        }];
        let report = evaluate_run(&run, &qrels, &HashMap::new()).unwrap();
        assert_eq!(report.scored_queries(), 1);
        assert_eq!(report.per_query["judged"], QueryMetrics::default());

        let report = evaluate_run(&run, &Qrels::default(), &HashMap::new()).unwrap();
        assert_eq!(report.scored_queries(), 0);
        assert_eq!(report.overall.queries, 0);
    }

    #[test]
    fn report_formats() {
        let mut qrels = Qrels::default();
        qrels.insert("q1", "p1", 1);
        let run = run_entries(
            "q1",
            &RankedList::new("rerank", vec![crate::fusion::ScoredPassage::new("p1", 1.0)]).unwrap(),
            "t",
        );
        let domains = HashMap::from([("q1".to_string(), Domain::new("cloud").unwrap())]);
        let report = evaluate_run(&run, &qrels, &domains).unwrap();
        assert_eq!(report.overall.ndcg5, 1.0);
        assert_eq!(
            report.to_csv(),
            "scope,queries,ndcg@5,ndcg@10,recall@10\ncloud,1,1.0000,1.0000,1.0000\noverall,1,1.0000,1.0000,1.0000\n"
        );
        let table = report.to_table();
        assert!(table.lines().nth(2).unwrap().starts_with("cloud "));
        assert_eq!(table.lines().count(), 4);
    }
}
