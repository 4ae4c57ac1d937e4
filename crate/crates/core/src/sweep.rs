//! Parameter sweeps over the full pipeline.
//!
//! Each row reruns the pipeline with exactly one setting changed and records
//! the effective configuration it ran with. Three sweeps are supported:
//!
//! - temperature: a "None" no-rewriting row, then one row per uniform
//!   temperature; nDCG@5 overall and per domain.
//! - pool_size: one row per scorer × candidate pool size; nDCG@5, nDCG@10,
//!   Recall@10.
//! - strategy: one row per query strategy; nDCG@5 and nDCG@10.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tracing::{debug, info};

use crate::config::PipelineConfig;
use crate::corpus::Domain;
use crate::eval::{align_table, evaluate_run, MetricReport, Qrels};
use crate::pipeline::{query_domains, scorer_from_spec, Engine, PipelineError};
use crate::rewrite::{Conversation, QueryStrategy};

pub const DEFAULT_TEMPERATURES: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];
pub const DEFAULT_POOL_SIZES: [usize; 5] = [30, 50, 100, 250, 500];

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep needs at least one value")]
    Empty,
    #[error("duplicate sweep value {0}")]
    Duplicate(String),
    #[error("invalid sweep value {0:?}")]
    InvalidValue(String),
    #[error("unknown sweep kind {0:?} (expected temperature, pool_size or strategy)")]
    UnknownKind(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Temperature,
    PoolSize,
    Strategy,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Temperature => "temperature",
            Self::PoolSize => "pool_size",
            Self::Strategy => "strategy",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "temperature" => Ok(Self::Temperature),
            "pool_size" | "pool-size" => Ok(Self::PoolSize),
            "strategy" => Ok(Self::Strategy),
            other => Err(SweepError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepSpec {
    Temperature(Vec<f64>),
    /// Pool sizes crossed with scorer backends; an empty scorer list means
    /// the configured scorer.
    PoolSize {
        sizes: Vec<usize>,
        scorers: Vec<String>,
    },
    Strategy(Vec<QueryStrategy>),
}

fn check_unique<T: ToString>(values: &[T]) -> Result<(), SweepError> {
    if values.is_empty() {
        return Err(SweepError::Empty);
    }
    let mut seen = HashSet::new();
    for v in values {
        let key = v.to_string();
        if !seen.insert(key.clone()) {
            return Err(SweepError::Duplicate(key));
        }
    }
    Ok(())
}

impl SweepSpec {
    pub fn default_for(kind: SweepKind) -> Self {
        match kind {
            SweepKind::Temperature => Self::Temperature(DEFAULT_TEMPERATURES.to_vec()),
            SweepKind::PoolSize => Self::PoolSize {
                sizes: DEFAULT_POOL_SIZES.to_vec(),
                scorers: Vec::new(),
            },
            SweepKind::Strategy => Self::Strategy(QueryStrategy::ALL.to_vec()),
        }
    }

    /// Parses textual values for `kind`; no values means the defaults.
    pub fn parse(kind: SweepKind, values: &[String], scorers: &[String]) -> Result<Self, SweepError> {
        let spec = if values.is_empty() {
            match (Self::default_for(kind), kind) {
                (Self::PoolSize { sizes, .. }, SweepKind::PoolSize) => Self::PoolSize {
                    sizes,
                    scorers: scorers.to_vec(),
                },
                (spec, _) => spec,
            }
        } else {
            let bad = |v: &String| SweepError::InvalidValue(v.clone());
            match kind {
                SweepKind::Temperature => Self::Temperature(
                    values
                        .iter()
                        .map(|v| v.parse::<f64>().map_err(|_| bad(v)))
                        .collect::<Result<_, _>>()?,
                ),
                SweepKind::PoolSize => Self::PoolSize {
                    sizes: values
                        .iter()
                        .map(|v| v.parse::<usize>().map_err(|_| bad(v)))
                        .collect::<Result<_, _>>()?,
                    scorers: scorers.to_vec(),
                },
                SweepKind::Strategy => Self::Strategy(
                    values
                        .iter()
                        .map(|v| v.parse::<QueryStrategy>().map_err(|_| bad(v)))
                        .collect::<Result<_, _>>()?,
                ),
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> SweepKind {
        match self {
            Self::Temperature(_) => SweepKind::Temperature,
            Self::PoolSize { .. } => SweepKind::PoolSize,
            Self::Strategy(_) => SweepKind::Strategy,
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        match self {
            Self::Temperature(ts) => {
                if let Some(t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                    return Err(SweepError::InvalidValue(t.to_string()));
                }
                check_unique(ts)
            }
            Self::PoolSize { sizes, scorers } => {
                if sizes.contains(&0) {
                    return Err(SweepError::InvalidValue("0".into()));
                }
                check_unique(sizes)?;
                if scorers.is_empty() {
                    Ok(())
                } else {
                    check_unique(scorers)
                }
            }
            Self::Strategy(s) => check_unique(s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Leading text cells (row label, and scorer for pool sweeps).
    pub labels: Vec<String>,
    /// Metric cells; `None` when a domain has no scored queries.
    pub values: Vec<Option<f64>>,
    /// Configuration the row ran with.
    pub config: PipelineConfig,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub label_headers: Vec<String>,
    pub value_headers: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Indices of rows holding the maximum of each value column.
    fn maxima(&self) -> Vec<HashSet<usize>> {
        (0..self.value_headers.len())
            .map(|c| {
                let best = self
                    .rows
                    .iter()
                    .filter_map(|r| r.values[c])
                    .fold(f64::NEG_INFINITY, f64::max);
                self.rows
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.values[c] == Some(best))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect()
    }

    /// CSV with plain numbers; a trailing `best` column lists the columns in
    /// which the row is maximal, separated by `;`.
    pub fn to_csv(&self) -> String {
        let maxima = self.maxima();
        let mut header: Vec<&str> = self.label_headers.iter().map(String::as_str).collect();
        header.extend(self.value_headers.iter().map(String::as_str));
        header.push("best");
        let mut out = header.join(",");
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let mut cells = row.labels.clone();
            cells.extend(
                row.values
                    .iter()
                    .map(|v| v.map_or(String::new(), |x| format!("{x:.4}"))),
            );
            let best: Vec<&str> = self
                .value_headers
                .iter()
                .enumerate()
                .filter(|(c, _)| maxima[*c].contains(&i))
                .map(|(_, h)| h.as_str())
                .collect();
            cells.push(best.join(";"));
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    /// Aligned text table; per-column maxima are marked with `*`.
    pub fn to_text(&self) -> String {
        let maxima = self.maxima();
        let mut header = self.label_headers.clone();
        header.extend(self.value_headers.iter().cloned());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut cells = row.labels.clone();
                cells.extend(row.values.iter().enumerate().map(|(c, v)| match v {
                    Some(x) if maxima[c].contains(&i) => format!("*{x:.3}"),
                    Some(x) => format!("{x:.3}"),
                    None => "-".to_string(),
                }));
                cells
            })
            .collect();
        align_table(&header, &body)
    }

    /// Effective configuration of every row, as TOML sections.
    pub fn configs_toml(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let _ = writeln!(out, "# row: {}\n{}", row.labels.join(" / "), row.config.to_toml());
        }
        out
    }

    /// Writes `sweep_<kind>.csv`, `.txt` and `_configs.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let stem = format!("sweep_{}", self.kind.as_str());
        let files = [
            (format!("{stem}.csv"), self.to_csv()),
            (format!("{stem}.txt"), self.to_text()),
            (format!("{stem}_configs.toml"), self.configs_toml()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| PipelineError::Io {
                path: path.display().to_string(),
                source,
            })?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Domain columns: the four benchmark domains plus any configured extras.
fn domain_columns(engine: &Engine) -> Vec<String> {
    let mut cols: BTreeSet<String> = Domain::CANONICAL.iter().map(|d| d.to_string()).collect();
    cols.extend(engine.domains().keys().cloned());
    cols.into_iter().collect()
}

fn evaluate(
    engine: &Engine,
    config: &PipelineConfig,
    conversations: &[Conversation],
    qrels: &Qrels,
) -> Result<MetricReport, PipelineError> {
    let scorer = scorer_from_spec(&config.backends.scorer, config, engine.tokenizer())?;
    let output = engine.run_with(conversations, &config.rewrite, &config.rerank, scorer.as_ref())?;
    Ok(evaluate_run(&output.entries, qrels, &query_domains(conversations))?)
}

/// Runs one pipeline pass per sweep value against a shared, pre-built engine.
pub fn run_sweep(
    engine: &Engine,
    conversations: &[Conversation],
    qrels: &Qrels,
    spec: &SweepSpec,
) -> Result<SweepTable, SweepError> {
    spec.validate()?;
    let base = engine.config().clone();
    let mut variants: Vec<(Vec<String>, PipelineConfig)> = Vec::new();
    match spec {
        SweepSpec::Temperature(temps) => {
            let mut none = base.clone();
            none.rewrite.strategy = QueryStrategy::None;
            variants.push((vec!["None".into()], none));
            for &t in temps {
                let mut cfg = base.clone();
                cfg.rewrite.temperatures.values_mut().for_each(|v| *v = t);
                for d in engine.domains().keys() {
                    cfg.rewrite.temperatures.insert(d.clone(), t);
                }
                variants.push((vec![format!("{t:.1}")], cfg));
            }
        }
        SweepSpec::PoolSize { sizes, scorers } => {
            let scorers = if scorers.is_empty() {
                vec![base.backends.scorer.clone()]
            } else {
                scorers.clone()
            };
            for scorer in &scorers {
                for &size in sizes {
                    let mut cfg = base.clone();
                    cfg.backends.scorer = scorer.clone();
                    cfg.rerank.pool_size = size;
                    variants.push((vec![scorer.clone(), size.to_string()], cfg));
                }
            }
        }
        SweepSpec::Strategy(strategies) => {
            for &s in strategies {
                let mut cfg = base.clone();
                cfg.rewrite.strategy = s;
                variants.push((vec![s.to_string()], cfg));
            }
        }
    }

    let (label_headers, value_headers): (Vec<String>, Vec<String>) = match spec.kind() {
        SweepKind::Temperature => {
            let mut cols = vec!["overall".to_string()];
            cols.extend(domain_columns(engine));
            (vec!["temperature".into()], cols)
        }
        SweepKind::PoolSize => (
            vec!["scorer".into(), "pool_size".into()],
            vec!["ndcg@5".into(), "ndcg@10".into(), "recall@10".into()],
        ),
        SweepKind::Strategy => (vec!["strategy".into()], vec!["ndcg@5".into(), "ndcg@10".into()]),
    };

    let mut rows = Vec::with_capacity(variants.len());
    for (labels, cfg) in variants {
        info!(sweep = spec.kind().as_str(), row = %labels.join(" / "), "running");
        debug!(config = %cfg.to_toml(), "effective sweep config");
        let report = evaluate(engine, &cfg, conversations, qrels)?;
        let values = match spec.kind() {
            SweepKind::Temperature => {
                let mut v = vec![Some(report.overall.ndcg5)];
                v.extend(
                    value_headers[1..]
                        .iter()
                        .map(|d| report.per_domain.get(d).map(|m| m.ndcg5)),
                );
                v
            }
            SweepKind::PoolSize => vec![
                Some(report.overall.ndcg5),
                Some(report.overall.ndcg10),
                Some(report.overall.recall10),
            ],
            SweepKind::Strategy => vec![Some(report.overall.ndcg5), Some(report.overall.ndcg10)],
        };
        rows.push(SweepRow {
            labels,
            values,
            config: cfg,
            report,
        });
    }
    Ok(SweepTable {
        kind: spec.kind(),
        label_headers,
        value_headers,
        rows,
    })
}
