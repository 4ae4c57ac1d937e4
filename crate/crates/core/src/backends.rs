//! HTTP clients for the model-backed stages.
//!
//! | stage      | request                                               | response               |
//! |------------|-------------------------------------------------------|------------------------|
//! | embeddings | `POST /embed {"texts": [..]}`                         | `{"vectors": [[..]]}`  |
//! | generation | `POST /generate {"prompt", "temperature", "max_new_tokens"}` | `{"text": ".."}` |
//! | reranking  | `POST /score {"query", "passages": [..]}`             | `{"scores": [..]}`     |
//!
//! Every request is retried up to `retries` extra times on failure.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::dense::{EmbeddingProvider, ProviderError};
use crate::rerank::{RerankScorer, ScorerError};
use crate::rewrite::{GenerationClient, GenerationError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub timeout_secs: f64,
    pub retries: u32,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            timeout_secs: 30.0,
            retries: 2,
        }
    }
}

enum CallError {
    Transport(String),
    Response(String),
}

#[derive(Debug, Clone)]
struct JsonEndpoint {
    agent: ureq::Agent,
    url: String,
    retries: u32,
}

impl JsonEndpoint {
    fn new(base: &str, path: &str, settings: HttpSettings) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(settings.timeout_secs)))
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/{}", base.trim_end_matches('/'), path),
            retries: settings.retries,
        }
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, CallError> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.agent.post(&self.url).send_json(body) {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<R>()
                        .map_err(|e| CallError::Response(e.to_string()));
                }
                Err(e) => {
                    warn!(url = %self.url, attempt, error = %e, "request failed");
                    last = e.to_string();
                }
            }
        }
        Err(CallError::Transport(format!(
            "{} failed after {} attempts: {last}",
            self.url,
            self.retries + 1
        )))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: JsonEndpoint,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, settings: HttpSettings) -> Self {
        Self {
            endpoint: JsonEndpoint::new(base_url, "embed", settings),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let resp: EmbedResponse = self.endpoint.post(&EmbedRequest { texts }).map_err(|e| match e {
            CallError::Transport(m) | CallError::Response(m) => ProviderError::Remote(m),
        })?;
        if resp.vectors.len() != texts.len() {
            return Err(ProviderError::Remote(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        Ok(resp.vectors)
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_new_tokens: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    endpoint: JsonEndpoint,
}

impl HttpGenerator {
    pub fn new(base_url: &str, settings: HttpSettings) -> Self {
        Self {
            endpoint: JsonEndpoint::new(base_url, "generate", settings),
        }
    }
}

impl GenerationClient for HttpGenerator {
    fn generate(&self, prompt: &str, temperature: f64, max_new_tokens: usize) -> Result<String, GenerationError> {
        let req = GenerateRequest {
            prompt,
            temperature,
            max_new_tokens,
        };
        self.endpoint
            .post::<_, GenerateResponse>(&req)
            .map(|r| r.text)
            .map_err(|e| match e {
                CallError::Transport(m) => GenerationError::Transport(m),
                CallError::Response(m) => GenerationError::Response(m),
            })
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    query: &'a str,
    passages: &'a [&'a str],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HttpScorer {
    endpoint: JsonEndpoint,
}

impl HttpScorer {
    pub fn new(base_url: &str, settings: HttpSettings) -> Self {
        Self {
            endpoint: JsonEndpoint::new(base_url, "score", settings),
        }
    }
}

impl RerankScorer for HttpScorer {
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ScorerError> {
        self.endpoint
            .post::<_, ScoreResponse>(&ScoreRequest { query, passages })
            .map(|r| r.scores)
            .map_err(|e| match e {
                CallError::Transport(m) => ScorerError::Transport(m),
                CallError::Response(m) => ScorerError::Response(m),
            })
    }
}
