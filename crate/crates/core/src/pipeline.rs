//! End-to-end orchestration: rewrite → BM25 + dense per query variant → RRF →
//! rerank → run entries, then evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::backends::{HttpEmbedder, HttpGenerator, HttpScorer};
use crate::config::{BackendSpec, ConfigError, PipelineConfig};
use crate::corpus::{load_corpus, Corpus, CorpusError, Domain};
use crate::dense::{DenseError, DenseIndex, EmbeddingProvider, EmbeddingStore, HashingEmbedder, ProviderError};
use crate::eval::{evaluate_run, run_entries, write_run, EvalError, MetricReport, Qrels, RunEntry};
use crate::fusion::{FusionError, RankedList, RrfConfig};
use crate::lexical::{Bm25Params, InvertedIndex, LexicalError, Stopwords, Tokenizer};
use crate::rerank::{rerank, OverlapScorer, RerankConfig, RerankError, RerankScorer};
use crate::rewrite::{
    load_conversations, retrieve_multi, rewrite_query, Conversation, GenerationClient, RewriteConfig, RewriteError,
    StubRewriter,
};
use crate::snapshot::{DomainSnapshot, SnapshotError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("no corpus configured for domain {0:?}")]
    UnknownDomain(String),
    #[error("missing required path: {0}")]
    MissingPath(&'static str),
    #[error("duplicate query id {0:?} in conversations")]
    DuplicateQuery(String),
    #[error("snapshot {path} was built with a different stopword list")]
    StopwordMismatch { path: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Process exit codes by failure class.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const BACKEND: i32 = 3;
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        use crate::rewrite::GenerationError;
        match self {
            Self::Config(_) | Self::UnknownDomain(_) | Self::MissingPath(_) => exit_code::USAGE,
            Self::Dense(DenseError::Provider(ProviderError::Remote(_)))
            | Self::Rerank(RerankError::Scorer(_))
            | Self::Rewrite(RewriteError::Generation {
                source: GenerationError::Transport(_) | GenerationError::Response(_),
                ..
            }) => exit_code::BACKEND,
            Self::Rewrite(RewriteError::Config(_) | RewriteError::UnknownTemperature(_)) => exit_code::USAGE,
            _ => exit_code::DATA,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Corpus and both indices for one domain.
#[derive(Debug, Clone)]
pub struct DomainIndex {
    pub corpus: Corpus,
    pub lexical: InvertedIndex,
    pub dense: DenseIndex,
}

impl DomainIndex {
    pub fn build(
        corpus: Corpus,
        tokenizer: &Tokenizer,
        embedder: &dyn EmbeddingProvider,
        config: &PipelineConfig,
    ) -> Result<Self, PipelineError> {
        let lexical = InvertedIndex::build(
            &corpus,
            tokenizer,
            Bm25Params {
                k1: config.lexical.k1,
                b: config.lexical.b,
            },
        )?;
        let dense = DenseIndex::build(&corpus, embedder, Some(config.dense.dim), config.dense.zero_vector)?;
        Ok(Self { corpus, lexical, dense })
    }

    pub fn to_snapshot(&self, stopwords: &Stopwords) -> DomainSnapshot {
        DomainSnapshot {
            corpus: self.corpus.clone(),
            stopwords: stopwords.clone(),
            lexical: self.lexical.clone(),
            dense: self.dense.clone(),
        }
    }
}

/// Model-backed stages, each either a deterministic stub or a remote service.
pub struct Backends {
    pub embedder: Box<dyn EmbeddingProvider>,
    pub generator: Box<dyn GenerationClient>,
    pub scorer: Box<dyn RerankScorer>,
}

impl Backends {
    pub fn stubs(config: &PipelineConfig, tokenizer: &Tokenizer) -> Self {
        Self {
            embedder: Box::new(HashingEmbedder::new(config.dense.dim, config.seed)),
            generator: Box::new(StubRewriter::new(tokenizer.clone())),
            scorer: Box::new(OverlapScorer::new(tokenizer.clone())),
        }
    }

    pub fn from_config(config: &PipelineConfig, tokenizer: &Tokenizer) -> Result<Self, PipelineError> {
        let embedder: Box<dyn EmbeddingProvider> =
            match BackendSpec::parse("backends.embedding", &config.backends.embedding, true)? {
                BackendSpec::Stub => Box::new(HashingEmbedder::new(config.dense.dim, config.seed)),
                BackendSpec::Store => {
                    let path = config
                        .paths
                        .embedding_store
                        .as_ref()
                        .ok_or(PipelineError::MissingPath("paths.embedding_store"))?;
                    Box::new(EmbeddingStore::load(path).map_err(DenseError::from)?)
                }
                BackendSpec::Http(url) => Box::new(HttpEmbedder::new(&url, config.http)),
            };
        let generator: Box<dyn GenerationClient> =
            match BackendSpec::parse("backends.generation", &config.backends.generation, false)? {
                BackendSpec::Http(url) => Box::new(HttpGenerator::new(&url, config.http)),
                _ => Box::new(StubRewriter::new(tokenizer.clone())),
            };
        let scorer = scorer_from_spec(&config.backends.scorer, config, tokenizer)?;
        Ok(Self {
            embedder,
            generator,
            scorer,
        })
    }
}

pub fn scorer_from_spec(
    spec: &str,
    config: &PipelineConfig,
    tokenizer: &Tokenizer,
) -> Result<Box<dyn RerankScorer>, PipelineError> {
    Ok(match BackendSpec::parse("backends.scorer", spec, false)? {
        BackendSpec::Http(url) => Box::new(HttpScorer::new(&url, config.http)),
        _ => Box::new(OverlapScorer::new(tokenizer.clone())),
    })
}

pub fn load_tokenizer(config: &PipelineConfig) -> Result<Tokenizer, PipelineError> {
    let stopwords = match &config.paths.stopwords {
        Some(path) => Stopwords::from_file(path)?,
        None => Stopwords::english(),
    };
    Ok(Tokenizer::new(stopwords))
}

/// Which stage's list `search` returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Lexical,
    Dense,
    Fused,
    Reranked,
}

/// Retrieval result for one conversation.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub query_id: String,
    pub queries: Vec<String>,
    pub ranked: RankedList,
}

#[derive(Debug)]
pub struct QueryFailure {
    pub query_id: String,
    pub error: PipelineError,
}

#[derive(Debug, Default)]
pub struct RunOutput {
    /// Run entries ordered by query id, then rank.
    pub entries: Vec<RunEntry>,
    pub rewrites: BTreeMap<String, Vec<String>>,
    pub failures: Vec<QueryFailure>,
}

impl RunOutput {
    pub fn run_file_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_run(&self.entries, &mut buf).expect("writing to memory");
        buf
    }
}

/// Indices plus backends, ready to answer conversations.
pub struct Engine {
    config: PipelineConfig,
    tokenizer: Tokenizer,
    domains: BTreeMap<String, DomainIndex>,
    backends: Backends,
    pool: rayon::ThreadPool,
}

impl Engine {
    pub fn new(
        config: PipelineConfig,
        tokenizer: Tokenizer,
        domains: BTreeMap<String, DomainIndex>,
        backends: Backends,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| ConfigError::Invalid(format!("worker pool: {e}")))?;
        Ok(Self {
            config,
            tokenizer,
            domains,
            backends,
            pool,
        })
    }

    /// Builds every configured domain in memory.
    pub fn build_from_corpora(
        config: PipelineConfig,
        tokenizer: Tokenizer,
        corpora: Vec<Corpus>,
        backends: Backends,
    ) -> Result<Self, PipelineError> {
        let mut domains = BTreeMap::new();
        for corpus in corpora {
            let name = corpus.domain().to_string();
            info!(domain = %name, passages = corpus.len(), "indexing");
            domains.insert(
                name,
                DomainIndex::build(corpus, &tokenizer, backends.embedder.as_ref(), &config)?,
            );
        }
        Self::new(config, tokenizer, domains, backends)
    }

    /// Loads corpora from `paths.corpora`, preferring snapshots in
    /// `paths.snapshot_dir` when present.
    pub fn from_config(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let tokenizer = load_tokenizer(&config)?;
        let backends = Backends::from_config(&config, &tokenizer)?;
        let mut domains = BTreeMap::new();
        for (name, path) in &config.paths.corpora {
            let domain = Domain::new(name.as_str())?;
            let snap_path = config.paths.snapshot_dir.as_ref().map(|d| snapshot_path(d, &domain));
            let index = match snap_path {
                Some(p) if p.exists() => {
                    info!(domain = %name, path = %p.display(), "loading snapshot");
                    let snap = DomainSnapshot::load(&p)?;
                    if snap.stopwords != *tokenizer.stopwords() {
                        return Err(PipelineError::StopwordMismatch {
                            path: p.display().to_string(),
                        });
                    }
                    DomainIndex {
                        corpus: snap.corpus,
                        lexical: snap.lexical,
                        dense: snap.dense,
                    }
                }
                _ => {
                    let corpus = load_corpus(path, domain)?;
                    info!(domain = %name, passages = corpus.len(), "indexing");
                    DomainIndex::build(corpus, &tokenizer, backends.embedder.as_ref(), &config)?
                }
            };
            domains.insert(name.clone(), index);
        }
        Self::new(config, tokenizer, domains, backends)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn domains(&self) -> &BTreeMap<String, DomainIndex> {
        &self.domains
    }

    pub fn domain(&self, name: &str) -> Result<&DomainIndex, PipelineError> {
        self.domains
            .get(name)
            .ok_or_else(|| PipelineError::UnknownDomain(name.to_string()))
    }

    /// Writes `<dir>/<domain>.idx` for every domain; returns the paths.
    pub fn write_snapshots(&self, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        for (name, index) in &self.domains {
            let path = snapshot_path(dir, &Domain::new(name.as_str())?);
            index.to_snapshot(self.tokenizer.stopwords()).save(&path)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Retrieval depth per retriever: deep enough to fill the rerank pool.
    fn depths(&self, rerank: &RerankConfig) -> (usize, usize) {
        (
            self.config.lexical.top_k.max(rerank.pool_size),
            self.config.dense.top_k.max(rerank.pool_size),
        )
    }

    /// BM25 and dense lists for one query text.
    pub fn hybrid_lists(
        &self,
        index: &DomainIndex,
        query: &str,
        rerank: &RerankConfig,
    ) -> Result<Vec<RankedList>, PipelineError> {
        let (lex_k, dense_k) = self.depths(rerank);
        let lexical = index.lexical.search(&self.tokenizer.tokenize(query), lex_k);
        let vector = self
            .backends
            .embedder
            .embed_texts(&[query])
            .map_err(DenseError::from)?
            .pop()
            .ok_or(DenseError::CountMismatch { expected: 1, found: 0 })?;
        let dense = index.dense.search(&vector, dense_k)?;
        Ok(vec![lexical, dense])
    }

    /// Raw-query retrieval without rewriting, stopping at `stage`.
    pub fn search(&self, domain: &str, query: &str, stage: Stage) -> Result<RankedList, PipelineError> {
        let index = self.domain(domain)?;
        let rerank_cfg = self.config.rerank;
        let mut lists = self.hybrid_lists(index, query, &rerank_cfg)?;
        match stage {
            Stage::Lexical => Ok(lists.swap_remove(0)),
            Stage::Dense => Ok(lists.swap_remove(1)),
            Stage::Fused => Ok(crate::fusion::rrf_fuse(&lists, &self.rrf())?),
            Stage::Reranked => {
                let fused = crate::fusion::rrf_fuse(&lists, &self.rrf())?;
                Ok(rerank(
                    query,
                    &fused,
                    &index.corpus,
                    self.backends.scorer.as_ref(),
                    &rerank_cfg,
                )?)
            }
        }
    }

    fn rrf(&self) -> RrfConfig {
        RrfConfig {
            k: self.config.fusion.rrf_k,
        }
    }

    /// Runs all three stages for one conversation. The first query variant is
    /// the one shown to the reranker.
    pub fn answer(
        &self,
        conv: &Conversation,
        rewrite_cfg: &RewriteConfig,
        rerank_cfg: &RerankConfig,
        scorer: &dyn RerankScorer,
    ) -> Result<QueryOutcome, PipelineError> {
        let index = self.domain(conv.domain.as_str())?;
        let queries = rewrite_query(conv, rewrite_cfg, self.backends.generator.as_ref())?;
        debug!(query_id = %conv.query_id, ?queries, "rewritten");
        let fused = retrieve_multi(&queries, &self.rrf(), |q| self.hybrid_lists(index, q, rerank_cfg))?;
        let ranked = rerank(&queries[0], &fused, &index.corpus, scorer, rerank_cfg)?;
        Ok(QueryOutcome {
            query_id: conv.query_id.clone(),
            queries,
            ranked,
        })
    }

    /// Answers every conversation with the engine's configuration.
    pub fn run(&self, conversations: &[Conversation]) -> Result<RunOutput, PipelineError> {
        self.run_with(
            conversations,
            &self.config.rewrite,
            &self.config.rerank,
            self.backends.scorer.as_ref(),
        )
    }

    /// Answers every conversation with explicit rewrite/rerank settings.
    /// Output order is by query id regardless of scheduling.
    pub fn run_with(
        &self,
        conversations: &[Conversation],
        rewrite_cfg: &RewriteConfig,
        rerank_cfg: &RerankConfig,
        scorer: &dyn RerankScorer,
    ) -> Result<RunOutput, PipelineError> {
        rewrite_cfg.validate()?;
        rerank_cfg.validate()?;
        let mut ordered: Vec<&Conversation> = conversations.iter().collect();
        ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        if let Some(w) = ordered.windows(2).find(|w| w[0].query_id == w[1].query_id) {
            return Err(PipelineError::DuplicateQuery(w[0].query_id.clone()));
        }
        let results: Vec<Result<QueryOutcome, PipelineError>> = self.pool.install(|| {
            ordered
                .par_iter()
                .map(|conv| self.answer(conv, rewrite_cfg, rerank_cfg, scorer))
                .collect()
        });
        let mut out = RunOutput::default();
        for (conv, result) in ordered.iter().zip(results) {
            match result {
                Ok(outcome) => {
                    out.entries
                        .extend(run_entries(&outcome.query_id, &outcome.ranked, &self.config.run_tag));
                    out.rewrites.insert(outcome.query_id, outcome.queries);
                }
                Err(error) => {
                    warn!(query_id = %conv.query_id, %error, "query failed");
                    if self.config.strict {
                        return Err(error);
                    }
                    out.failures.push(QueryFailure {
                        query_id: conv.query_id.clone(),
                        error,
                    });
                }
            }
        }
        Ok(out)
    }
}

pub fn snapshot_path(dir: &Path, domain: &Domain) -> PathBuf {
    dir.join(format!("{domain}.idx"))
}

/// Query id → domain, for per-domain aggregation.
pub fn query_domains(conversations: &[Conversation]) -> HashMap<String, Domain> {
    conversations
        .iter()
        .map(|c| (c.query_id.clone(), c.domain.clone()))
        .collect()
}

pub fn load_qrels(config: &PipelineConfig) -> Result<Option<Qrels>, PipelineError> {
    Ok(match &config.paths.qrels {
        Some(p) => Some(Qrels::load(p)?),
        None => None,
    })
}

pub fn load_configured_conversations(config: &PipelineConfig) -> Result<Vec<Conversation>, PipelineError> {
    let path = config
        .paths
        .conversations
        .as_ref()
        .ok_or(PipelineError::MissingPath("paths.conversations"))?;
    Ok(load_conversations(path)?)
}

/// Artifacts of a full pipeline run.
#[derive(Debug)]
pub struct PipelineResult {
    pub output: RunOutput,
    pub report: Option<MetricReport>,
    pub run_path: PathBuf,
}

/// Runs the configured pipeline and writes `run.trec`, `errors.log` and,
/// when qrels are configured, `report.csv` / `report.txt` to the output
/// directory.
pub fn run_pipeline(config: PipelineConfig) -> Result<PipelineResult, PipelineError> {
    let conversations = load_configured_conversations(&config)?;
    let qrels = load_qrels(&config)?;
    let engine = Engine::from_config(config)?;
    run_and_write(&engine, &conversations, qrels.as_ref())
}

pub fn run_and_write(
    engine: &Engine,
    conversations: &[Conversation],
    qrels: Option<&Qrels>,
) -> Result<PipelineResult, PipelineError> {
    let out_dir = engine.config().paths.output_dir.clone();
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let output = engine.run(conversations)?;

    let run_path = out_dir.join("run.trec");
    let file = File::create(&run_path).map_err(io_err(&run_path))?;
    write_run(&output.entries, BufWriter::new(file)).map_err(io_err(&run_path))?;

    let log_path = out_dir.join("errors.log");
    let log: String = output
        .failures
        .iter()
        .map(|f| format!("{}\t{}\n", f.query_id, f.error))
        .collect();
    fs::write(&log_path, log).map_err(io_err(&log_path))?;

    let report = match qrels {
        Some(q) => {
            let report = evaluate_run(&output.entries, q, &query_domains(conversations))?;
            for (name, body) in [("report.csv", report.to_csv()), ("report.txt", report.to_table())] {
                let p = out_dir.join(name);
                fs::write(&p, body).map_err(io_err(&p))?;
            }
            Some(report)
        }
        None => None,
    };
    info!(
        queries = output.rewrites.len(),
        failures = output.failures.len(),
        path = %run_path.display(),
        "run written"
    );
    Ok(PipelineResult {
        output,
        report,
        run_path,
    })
}
