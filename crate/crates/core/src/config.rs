//! Pipeline configuration: one TOML file, every field overridable by dotted
//! key (`lexical.k1=1.2`, `rewrite.temperatures.cloud=0.1`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::HttpSettings;
use crate::dense::{ZeroVectorPolicy, DEFAULT_DIM};
use crate::fusion::DEFAULT_RRF_K;
use crate::rerank::RerankConfig;
use crate::rewrite::RewriteConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid override {key:?}: {message}")]
    Override { key: String, message: String },
    #[error("invalid backend {value:?} for {field}: expected \"stub\"{store} or an http(s) URL")]
    Backend {
        field: &'static str,
        value: String,
        store: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Corpus JSONL per domain name.
    pub corpora: BTreeMap<String, PathBuf>,
    pub conversations: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// Stopword file; the bundled English list when unset.
    pub stopwords: Option<PathBuf>,
    pub embedding_store: Option<PathBuf>,
    pub gold_rewrites: Option<PathBuf>,
    /// Directory of per-domain index snapshots (`<domain>.idx`).
    pub snapshot_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexicalConfig {
    pub k1: f64,
    pub b: f64,
    pub top_k: usize,
}

impl Default for LexicalConfig {
    fn default() -> Self {
        Self {
            k1: 1.5,
            b: 0.75,
            top_k: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseConfig {
    pub dim: usize,
    pub top_k: usize,
    pub zero_vector: ZeroVectorPolicy,
}

impl Default for DenseConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            top_k: 50,
            zero_vector: ZeroVectorPolicy::Reject,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub rrf_k: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { rrf_k: DEFAULT_RRF_K }
    }
}

/// Backend selectors: `"stub"`, an `http(s)://` base URL, or for embeddings
/// also `"store"` (the precomputed embedding file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub embedding: String,
    pub generation: String,
    pub scorer: String,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            embedding: "stub".into(),
            generation: "stub".into(),
            scorer: "stub".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Stub,
    Store,
    Http(String),
}

impl BackendSpec {
    pub fn parse(field: &'static str, value: &str, allow_store: bool) -> Result<Self, ConfigError> {
        match value {
            "stub" => Ok(Self::Stub),
            "store" if allow_store => Ok(Self::Store),
            v if v.starts_with("http://") || v.starts_with("https://") => Ok(Self::Http(v.to_string())),
            v => Err(ConfigError::Backend {
                field,
                value: v.to_string(),
                store: if allow_store { ", \"store\"" } else { "" },
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Query worker threads; 0 uses all available cores.
    pub workers: usize,
    /// Abort on the first per-query error instead of logging it.
    pub strict: bool,
    pub run_tag: String,
    pub paths: PathsConfig,
    pub lexical: LexicalConfig,
    pub dense: DenseConfig,
    pub fusion: FusionConfig,
    pub rerank: RerankConfig,
    pub rewrite: RewriteConfig,
    pub backends: BackendsConfig,
    pub http: HttpSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workers: 0,
            strict: false,
            run_tag: "convrag".into(),
            paths: PathsConfig {
                output_dir: PathBuf::from("out"),
                ..Default::default()
            },
            lexical: LexicalConfig::default(),
            dense: DenseConfig::default(),
            fusion: FusionConfig::default(),
            rerank: RerankConfig::default(),
            rewrite: RewriteConfig::default(),
            backends: BackendsConfig::default(),
            http: HttpSettings::default(),
        }
    }
}

impl PipelineConfig {
    /// Loads a TOML file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<config>".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes to TOML")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        p.corpora.values_mut().for_each(fix);
        for opt in [
            &mut p.conversations,
            &mut p.qrels,
            &mut p.stopwords,
            &mut p.embedding_store,
            &mut p.gold_rewrites,
            &mut p.snapshot_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(opt);
        }
        fix(&mut p.output_dir);
    }

    /// Sets one dotted key. The value is parsed as a TOML literal, falling
    /// back to a plain string.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError::Override {
            key: key.to_string(),
            message,
        };
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));

        let mut root = toml::Value::try_from(&*self).map_err(|e| err(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(err("empty key segment".into()));
        }
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| err(format!("{part:?} is not a table")))?;
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        let table = node.as_table_mut().ok_or_else(|| err("parent is not a table".into()))?;
        table.insert(parts[parts.len() - 1].to_string(), parsed);
        *self = root.try_into().map_err(|e: toml::de::Error| err(e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        if self.lexical.top_k == 0 || self.dense.top_k == 0 {
            return Err(invalid("retriever top_k must be positive".into()));
        }
        if self.dense.dim == 0 {
            return Err(invalid("dense.dim must be positive".into()));
        }
        crate::lexical::Bm25Params {
            k1: self.lexical.k1,
            b: self.lexical.b,
        }
        .validate()
        .map_err(|e| invalid(e.to_string()))?;
        crate::fusion::RrfConfig { k: self.fusion.rrf_k }
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.rerank.validate().map_err(|e| invalid(e.to_string()))?;
        self.rewrite.validate().map_err(|e| invalid(e.to_string()))?;
        for name in self.paths.corpora.keys() {
            crate::corpus::Domain::new(name.as_str()).map_err(|e| invalid(e.to_string()))?;
        }
        BackendSpec::parse("backends.embedding", &self.backends.embedding, true)?;
        BackendSpec::parse("backends.generation", &self.backends.generation, false)?;
        BackendSpec::parse("backends.scorer", &self.backends.scorer, false)?;
        if self.http.timeout_secs <= 0.0 || !self.http.timeout_secs.is_finite() {
            return Err(invalid("http.timeout_secs must be positive".into()));
        }
        Ok(())
    }
}
