//! Conversational query rewriting.
//!
//! A conversation's final user turn is rewritten into a standalone query by
//! a [`GenerationClient`]. The prompt is a fixed system instruction followed
//! by a windowed history and the current question. Strategies:
//!
//! - `none`: the raw last-turn question, no generation.
//! - `simple`: one rewrite at the domain's temperature.
//! - `domain_aware`: as `simple`, with a domain description prepended.
//! - `multi_query`: `num_variants` rewrites, each prompt tagged `Variant i of n`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Domain;
use crate::fusion::{rrf_fuse, FusionError, RankedList, RrfConfig};
use crate::lexical::{split_words, Tokenizer};

/// System instruction given to the rewriter, byte for byte.
pub const SYSTEM_PROMPT: &str = "You are a query rewriting assistant for information retrieval. Given a conversation history and a current question, rewrite the question to be completely standalone and self-contained.

Rules:
1. Resolve all pronouns (it, they, this, that) to their explicit referents
2. Include relevant context from the conversation that's needed to understand the query
3. Keep the rewritten query concise and search-friendly
4. Do not add information not present in the conversation
5. If the question is already standalone, return it unchanged";

const HISTORY_HEADER: &str = "Conversation history:";
const QUESTION_PREFIX: &str = "Current question: ";

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("conversation {0:?} has no turns")]
    EmptyConversation(String),
    #[error("conversation {0:?} does not end with a user turn")]
    LastTurnNotUser(String),
    #[error("conversation {id:?}: turn {turn} has empty text")]
    EmptyTurn { id: String, turn: usize },
    #[error("conversation {id:?}: question alone needs {tokens} prompt tokens, budget is {budget}")]
    QuestionTooLong { id: String, tokens: usize, budget: usize },
    #[error("no rewrite temperature configured for domain {0:?}")]
    UnknownTemperature(String),
    #[error("no domain description configured for domain {0:?}")]
    UnknownDomainDescription(String),
    #[error("invalid rewrite config: {0}")]
    Config(String),
    #[error("conversation {conversation_id:?}: generation failed: {source}")]
    Generation {
        conversation_id: String,
        #[source]
        source: GenerationError,
    },
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Response(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
}

impl Role {
    fn label(self) -> &'static str {
        match self {
            Role::User => "USER",
            Role::Agent => "AGENT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn agent(text: impl Into<String>) -> Self {
        Self {
            role: Role::Agent,
            text: text.into(),
        }
    }
}

/// Ordered turns ending with the user question to rewrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    #[serde(rename = "conversation_id")]
    pub id: String,
    pub domain: Domain,
    /// Identifies the final-turn retrieval query for qrels joins.
    pub query_id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn validate(&self) -> Result<(), RewriteError> {
        let last = self
            .turns
            .last()
            .ok_or_else(|| RewriteError::EmptyConversation(self.id.clone()))?;
        if last.role != Role::User {
            return Err(RewriteError::LastTurnNotUser(self.id.clone()));
        }
        if let Some(i) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(RewriteError::EmptyTurn {
                id: self.id.clone(),
                turn: i + 1,
            });
        }
        Ok(())
    }

    /// The current (final) question. Panics on an empty conversation.
    pub fn question(&self) -> &str {
        &self.turns.last().expect("conversation has no turns").text
    }

    /// Turns preceding the current question.
    pub fn history(&self) -> &[Turn] {
        &self.turns[..self.turns.len().saturating_sub(1)]
    }

    pub fn is_first_turn(&self) -> bool {
        self.turns.len() == 1
    }
}

/// Reads conversations JSONL; every record is validated.
pub fn load_conversations(path: impl AsRef<Path>) -> Result<Vec<Conversation>, RewriteError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| RewriteError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let parse_err = |message: String| RewriteError::Parse {
            path: shown.clone(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        conv.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(conv);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    /// No rewriting: the raw last-turn question.
    None,
    Simple,
    DomainAware,
    MultiQuery,
}

impl QueryStrategy {
    pub const ALL: [QueryStrategy; 4] = [Self::None, Self::Simple, Self::DomainAware, Self::MultiQuery];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Simple => "simple",
            Self::DomainAware => "domain_aware",
            Self::MultiQuery => "multi_query",
        }
    }
}

impl fmt::Display for QueryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for QueryStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown query strategy {s:?}"))
    }
}

pub fn default_temperatures() -> BTreeMap<String, f64> {
    BTreeMap::from([
        (Domain::CLAPNQ.to_string(), 0.2),
        (Domain::CLOUD.to_string(), 0.0),
        (Domain::FIQA.to_string(), 0.3),
        (Domain::GOVT.to_string(), 0.3),
    ])
}

pub fn default_domain_descriptions() -> BTreeMap<String, String> {
    BTreeMap::from([
        (
            Domain::CLAPNQ.to_string(),
            "This is a general knowledge query about Wikipedia content".to_string(),
        ),
        (
            Domain::CLOUD.to_string(),
            "This is a technical cloud computing query".to_string(),
        ),
        (
            Domain::FIQA.to_string(),
            "This is a personal finance query from a discussion forum".to_string(),
        ),
        (
            Domain::GOVT.to_string(),
            "This is a government policy query".to_string(),
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewriteConfig {
    /// Generation temperature per domain name.
    pub temperatures: BTreeMap<String, f64>,
    /// Most recent prior turns shown to the rewriter.
    pub history_window: usize,
    /// Whitespace-token budget for the whole prompt.
    pub max_prompt_tokens: usize,
    pub max_new_tokens: usize,
    pub skip_first_turn: bool,
    pub strategy: QueryStrategy,
    pub num_variants: usize,
    /// Sentences injected by the `domain_aware` strategy.
    pub domain_descriptions: BTreeMap<String, String>,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        Self {
            temperatures: default_temperatures(),
            history_window: 10,
            max_prompt_tokens: 2048,
            max_new_tokens: 128,
            skip_first_turn: true,
            strategy: QueryStrategy::Simple,
            num_variants: 3,
            domain_descriptions: default_domain_descriptions(),
        }
    }
}

impl RewriteConfig {
    pub fn validate(&self) -> Result<(), RewriteError> {
        if let Some((d, t)) = self.temperatures.iter().find(|(_, t)| !(0.0..=1.0).contains(*t)) {
            return Err(RewriteError::Config(format!(
                "temperature {t} for {d:?} is outside [0, 1]"
            )));
        }
        if self.history_window == 0 {
            return Err(RewriteError::Config("history_window must be at least 1".into()));
        }
        if self.max_prompt_tokens == 0 || self.max_new_tokens == 0 || self.num_variants == 0 {
            return Err(RewriteError::Config(
                "max_prompt_tokens, max_new_tokens and num_variants must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn temperature_for(&self, domain: &Domain) -> Result<f64, RewriteError> {
        self.temperatures
            .get(domain.as_str())
            .copied()
            .ok_or_else(|| RewriteError::UnknownTemperature(domain.to_string()))
    }
}

/// A rewriter prompt: the fixed system instruction plus the user message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn token_count(&self) -> usize {
        self.system.split_whitespace().count() + self.user.split_whitespace().count()
    }

    /// Single-string form sent to generation backends.
    pub fn render(&self) -> String {
        format!("SYSTEM:\n{}\n\nUSER:\n{}", self.system, self.user)
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Builds the rewriter prompt for the conversation's current question.
pub fn build_prompt(conv: &Conversation, config: &RewriteConfig) -> Result<Prompt, RewriteError> {
    build_prompt_variant(conv, config, None)
}

/// As [`build_prompt`], optionally tagged with `Variant i of n` (1-based).
///
/// History lines are `ROLE: text`. When the prompt exceeds the token budget
/// the oldest history turns are dropped first; the question is always kept.
pub fn build_prompt_variant(
    conv: &Conversation,
    config: &RewriteConfig,
    variant: Option<(usize, usize)>,
) -> Result<Prompt, RewriteError> {
    conv.validate()?;
    let mut head = Vec::new();
    if config.strategy == QueryStrategy::DomainAware {
        let sentence = config
            .domain_descriptions
            .get(conv.domain.as_str())
            .ok_or_else(|| RewriteError::UnknownDomainDescription(conv.domain.to_string()))?;
        head.push(format!("{sentence}."));
    }
    let mut tail = vec![format!("{QUESTION_PREFIX}{}", one_line(conv.question()))];
    if let Some((i, n)) = variant {
        tail.push(format!("Variant {i} of {n}"));
    }

    let history = conv.history();
    let window = &history[history.len().saturating_sub(config.history_window)..];
    let lines: Vec<String> = window
        .iter()
        .map(|t| format!("{}: {}", t.role.label(), one_line(&t.text)))
        .collect();

    let fixed = SYSTEM_PROMPT.split_whitespace().count()
        + head
            .iter()
            .chain(&tail)
            .map(|l| l.split_whitespace().count())
            .sum::<usize>();
    if fixed > config.max_prompt_tokens {
        return Err(RewriteError::QuestionTooLong {
            id: conv.id.clone(),
            tokens: fixed,
            budget: config.max_prompt_tokens,
        });
    }
    let header_tokens = HISTORY_HEADER.split_whitespace().count();
    let mut kept: &[String] = &lines;
    let mut history_tokens: usize = kept.iter().map(|l| l.split_whitespace().count()).sum();
    while !kept.is_empty() && fixed + header_tokens + history_tokens > config.max_prompt_tokens {
        history_tokens -= kept[0].split_whitespace().count();
        kept = &kept[1..];
    }

    let mut user = head;
    if !kept.is_empty() {
        user.push(HISTORY_HEADER.to_string());
        user.extend(kept.iter().cloned());
    }
    user.extend(tail);
    Ok(Prompt {
        system: SYSTEM_PROMPT.to_string(),
        user: user.join("\n"),
    })
}

/// Text-generation backend standing in for the rewriting model.
///
/// At temperature 0 an implementation must be deterministic.
pub trait GenerationClient: Send + Sync {
    fn generate(&self, prompt: &str, temperature: f64, max_new_tokens: usize) -> Result<String, GenerationError>;
}

impl<C: GenerationClient + ?Sized> GenerationClient for Arc<C> {
    fn generate(&self, prompt: &str, temperature: f64, max_new_tokens: usize) -> Result<String, GenerationError> {
        (**self).generate(prompt, temperature, max_new_tokens)
    }
}

/// Extracts the current question and history texts from a rendered prompt.
fn parse_prompt(prompt: &str) -> (String, Vec<String>) {
    let mut question = String::new();
    let mut history = Vec::new();
    for line in prompt.lines() {
        if let Some(q) = line.strip_prefix(QUESTION_PREFIX) {
            question = q.to_string();
        } else if let Some(t) = line.strip_prefix("USER: ").or_else(|| line.strip_prefix("AGENT: ")) {
            history.push(t.to_string());
        }
    }
    (question, history)
}

/// Returns the current question unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoClient;

impl GenerationClient for EchoClient {
    fn generate(&self, prompt: &str, _temperature: f64, _max_new_tokens: usize) -> Result<String, GenerationError> {
        Ok(parse_prompt(prompt).0)
    }
}

/// Deterministic heuristic rewriter for tests and dry runs.
///
/// Replaces each pronoun `it`/`they`/`this`/`that` with the last capitalized
/// word (`[A-Z][a-z]+`) of the history. At temperature `t > 0` it also appends
/// the `ceil(4t)` most recent distinct history content words.
#[derive(Debug, Clone, Default)]
pub struct StubRewriter {
    tokenizer: Tokenizer,
}

impl StubRewriter {
    pub fn new(tokenizer: Tokenizer) -> Self {
        Self { tokenizer }
    }

    fn is_capitalized(word: &str) -> bool {
        let mut chars = word.chars();
        matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
            && word.len() > 1
            && chars.all(|c| c.is_ascii_lowercase())
    }

    pub fn rewrite(&self, question: &str, history: &[String], temperature: f64) -> String {
        let referent = history
            .iter()
            .flat_map(|t| split_words(t))
            .filter(|w| Self::is_capitalized(w) && !self.tokenizer.stopwords().contains(&w.to_lowercase()))
            .last();
        let mut words: Vec<String> = question
            .split_whitespace()
            .map(|word| {
                let Some(referent) = referent else {
                    return word.to_string();
                };
                let core_start = word.find(char::is_alphanumeric).unwrap_or(word.len());
                let core_end = word
                    .rfind(char::is_alphanumeric)
                    .map(|i| i + word[i..].chars().next().map_or(1, char::len_utf8))
                    .unwrap_or(core_start);
                let core = &word[core_start..core_end.max(core_start)];
                if matches!(core.to_lowercase().as_str(), "it" | "they" | "this" | "that") {
                    format!("{}{}{}", &word[..core_start], referent, &word[core_end..])
                } else {
                    word.to_string()
                }
            })
            .collect();
        if temperature > 0.0 {
            let n = (4.0 * temperature).ceil() as usize;
            let mut seen = HashSet::new();
            let recent: Vec<String> = history
                .iter()
                .rev()
                .flat_map(|t| {
                    let mut toks = self.tokenizer.tokenize(t).tokens().to_vec();
                    toks.reverse();
                    toks
                })
                .filter(|w| seen.insert(w.clone()))
                .take(n)
                .collect();
            words.extend(recent);
        }
        words.join(" ")
    }
}

impl GenerationClient for StubRewriter {
    fn generate(&self, prompt: &str, temperature: f64, _max_new_tokens: usize) -> Result<String, GenerationError> {
        let (question, history) = parse_prompt(prompt);
        Ok(self.rewrite(&question, &history, temperature))
    }
}

/// Records every call made to an inner client.
#[derive(Debug, Default)]
pub struct RecordingClient<C> {
    inner: C,
    calls: AtomicUsize,
    log: Mutex<Vec<(String, f64)>>,
}

impl<C: GenerationClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// `(prompt, temperature)` of each call in arrival order.
    pub fn log(&self) -> Vec<(String, f64)> {
        self.log.lock().expect("recording lock poisoned").clone()
    }
}

impl<C: GenerationClient> GenerationClient for RecordingClient<C> {
    fn generate(&self, prompt: &str, temperature: f64, max_new_tokens: usize) -> Result<String, GenerationError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .expect("recording lock poisoned")
            .push((prompt.to_string(), temperature));
        self.inner.generate(prompt, temperature, max_new_tokens)
    }
}

/// Produces the retrieval queries for a conversation's current question.
pub fn rewrite_query(
    conv: &Conversation,
    config: &RewriteConfig,
    client: &dyn GenerationClient,
) -> Result<Vec<String>, RewriteError> {
    conv.validate()?;
    let question = conv.question().trim().to_string();
    if config.strategy == QueryStrategy::None || (config.skip_first_turn && conv.is_first_turn()) {
        return Ok(vec![question]);
    }
    let temperature = config.temperature_for(&conv.domain)?;
    let call = |prompt: Prompt| -> Result<String, RewriteError> {
        let text = client
            .generate(&prompt.render(), temperature, config.max_new_tokens)
            .map_err(|source| RewriteError::Generation {
                conversation_id: conv.id.clone(),
                source,
            })?;
        let text = text.trim();
        Ok(if text.is_empty() {
            question.clone()
        } else {
            text.to_string()
        })
    };
    match config.strategy {
        QueryStrategy::MultiQuery => {
            let n = config.num_variants;
            (1..=n)
                .map(|i| call(build_prompt_variant(conv, config, Some((i, n)))?))
                .collect()
        }
        _ => Ok(vec![call(build_prompt(conv, config)?)?]),
    }
}

/// Runs hybrid retrieval per query and fuses every resulting list with RRF.
///
/// `retrieve` returns the lists for one query (one lexical and one dense).
pub fn retrieve_multi<E, F>(queries: &[String], rrf: &RrfConfig, mut retrieve: F) -> Result<RankedList, E>
where
    F: FnMut(&str) -> Result<Vec<RankedList>, E>,
    E: From<FusionError>,
{
    if queries.is_empty() {
        return Err(FusionError::NoInputs.into());
    }
    let mut lists = Vec::with_capacity(queries.len() * 2);
    for q in queries {
        lists.extend(retrieve(q)?);
    }
    Ok(rrf_fuse(&lists, rrf)?)
}

#[derive(Deserialize)]
struct GoldRewrite {
    query_id: String,
    rewrite: String,
}

/// Reads gold rewrites JSONL (`{"query_id", "rewrite"}` per line).
pub fn load_gold_rewrites(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, RewriteError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| RewriteError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let parse_err = |message: String| RewriteError::Parse {
            path: shown.clone(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let gold: GoldRewrite = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.insert(gold.query_id, gold.rewrite);
    }
    Ok(out)
}

/// Token-level overlap between a produced and a gold rewrite.
pub fn token_f1(produced: &str, gold: &str) -> f64 {
    let p: Vec<String> = split_words(produced).map(str::to_lowercase).collect();
    let g: Vec<String> = split_words(gold).map(str::to_lowercase).collect();
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut remaining: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &g {
        *remaining.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = remaining.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(turns: Vec<Turn>) -> Conversation {
        Conversation {
            id: "c1".into(),
            domain: Domain::new("cloud").unwrap(),
            query_id: "q1".into(),
            turns,
        }
    }

    fn history_turns(n: usize) -> Vec<Turn> {
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    Turn::user(format!("question {i}"))
                } else {
                    Turn::agent(format!("answer {i}"))
                }
            })
            .collect()
    }

    #[test]
    fn first_turn_prompt_has_no_history() {
        let p = build_prompt(
            &conv(vec![Turn::user("What is Kubernetes?")]),
            &RewriteConfig::default(),
        )
        .unwrap();
        assert_eq!(p.system, SYSTEM_PROMPT);
        assert_eq!(p.user, "Current question: What is Kubernetes?");
    }

    #[test]
    fn window_keeps_most_recent_turns() {
        let mut turns = history_turns(12);
        turns.push(Turn::user("final?"));
        let p = build_prompt(&conv(turns), &RewriteConfig::default()).unwrap();
        let lines: Vec<&str> = p
            .user
            .lines()
            .filter(|l| l.starts_with("USER:") || l.starts_with("AGENT:"))
            .collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[0], "USER: question 2");
        assert_eq!(lines[9], "AGENT: answer 11");
        assert!(!p.user.contains("question 0") && !p.user.contains("answer 1\n"));
    }

    #[test]
    fn budget_drops_exactly_oldest_turn() {
        let c = conv(vec![
            Turn::user("one two three four five"),
            Turn::agent("six seven"),
            Turn::user("eight?"),
        ]);
        let system = SYSTEM_PROMPT.split_whitespace().count();
        // Question line = 3 tokens, header = 2, turn lines = 6 and 3 tokens.
        let unlimited = build_prompt(&c, &RewriteConfig::default()).unwrap();
        assert_eq!(unlimited.token_count(), system + 3 + 2 + 6 + 3);
        let cfg = RewriteConfig {
            max_prompt_tokens: system + 3 + 2 + 3,
            ..Default::default()
        };
        let p = build_prompt(&c, &cfg).unwrap();
        assert_eq!(
            p.user,
            "Conversation history:\nAGENT: six seven\nCurrent question: eight?"
        );
        assert!(p.token_count() <= cfg.max_prompt_tokens);

        let tight = RewriteConfig {
            max_prompt_tokens: system + 4,
            ..Default::default()
        };
        assert_eq!(build_prompt(&c, &tight).unwrap().user, "Current question: eight?");
        let too_small = RewriteConfig {
            max_prompt_tokens: system + 2,
            ..Default::default()
        };
        assert!(matches!(
            build_prompt(&c, &too_small),
            Err(RewriteError::QuestionTooLong { .. })
        ));
    }

    #[test]
    fn domain_aware_prepends_description() {
        let cfg = RewriteConfig {
            strategy: QueryStrategy::DomainAware,
            ..Default::default()
        };
        let p = build_prompt(&conv(vec![Turn::user("a?")]), &cfg).unwrap();
        assert!(p.user.starts_with("This is a technical cloud computing query.\n"));
    }

    #[test]
    fn first_turn_skips_generation() {
        let client = RecordingClient::new(StubRewriter::default());
        let out = rewrite_query(
            &conv(vec![Turn::user("How much does it cost?")]),
            &RewriteConfig::default(),
            &client,
        )
        .unwrap();
        assert_eq!(out, ["How much does it cost?"]);
        assert_eq!(client.calls(), 0);
    }

    #[test]
    fn multi_query_issues_one_call_per_variant() {
        let client = RecordingClient::new(EchoClient);
        let cfg = RewriteConfig {
            strategy: QueryStrategy::MultiQuery,
            ..Default::default()
        };
        let c = conv(vec![Turn::user("hi"), Turn::agent("hello"), Turn::user("and it?")]);
        let out = rewrite_query(&c, &cfg, &client).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(client.calls(), 3);
        let log = client.log();
        assert!(log[0].0.ends_with("Variant 1 of 3") && log[2].0.ends_with("Variant 3 of 3"));
    }

    #[test]
    fn echo_is_identity_and_temperature_routes() {
        let client = RecordingClient::new(EchoClient);
        let c = conv(vec![
            Turn::user("hi"),
            Turn::agent("hello"),
            Turn::user("What about  it?"),
        ]);
        let out = rewrite_query(&c, &RewriteConfig::default(), &client).unwrap();
        assert_eq!(out, ["What about it?"]);
        assert_eq!(client.log()[0].1, 0.0);
    }

    struct Blank;
    impl GenerationClient for Blank {
        fn generate(&self, _: &str, _: f64, _: usize) -> Result<String, GenerationError> {
            Ok("   ".into())
        }
    }

    struct Down;
    impl GenerationClient for Down {
        fn generate(&self, _: &str, _: f64, _: usize) -> Result<String, GenerationError> {
            Err(GenerationError::Transport("refused".into()))
        }
    }

    #[test]
    fn blank_generation_falls_back_and_errors_carry_id() {
        let c = conv(vec![Turn::user("hi"), Turn::agent("hello"), Turn::user("q?")]);
        assert_eq!(rewrite_query(&c, &RewriteConfig::default(), &Blank).unwrap(), ["q?"]);
        match rewrite_query(&c, &RewriteConfig::default(), &Down) {
            Err(RewriteError::Generation { conversation_id, .. }) => assert_eq!(conversation_id, "c1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stub_resolves_pronouns_and_expands_with_temperature() {
        let stub = StubRewriter::new(Tokenizer::english());
        let history = vec!["Tell me about IBM Cloud pricing plans".to_string()];
        assert_eq!(
            stub.rewrite("How much does it cost?", &history, 0.0),
            "How much does Cloud cost?"
        );
        // ceil(4 * 0.2) = 1 extra word, ceil(4 * 0.3) = 2.
        assert_eq!(
            stub.rewrite("How much does it cost?", &history, 0.2),
            "How much does Cloud cost? plans"
        );
        assert_eq!(
            stub.rewrite("How much does it cost?", &history, 0.3),
            "How much does Cloud cost? plans pricing"
        );
        assert_eq!(stub.rewrite("Is that free?", &[], 0.0), "Is that free?");
    }

    #[test]
    fn conversation_validation() {
        assert!(conv(vec![]).validate().is_err());
        assert!(conv(vec![Turn::user("a"), Turn::agent("b")]).validate().is_err());
        assert!(conv(vec![Turn::user(" ")]).validate().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = RewriteConfig::default();
        cfg.temperatures.insert("x".into(), 1.5);
        assert!(cfg.validate().is_err());
        assert!(RewriteConfig {
            history_window: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn f1_overlap() {
        assert_eq!(token_f1("IBM Cloud pricing", "ibm cloud pricing"), 1.0);
        assert_eq!(token_f1("a b", "c d"), 0.0);
        assert!((token_f1("a b c d", "a b") - 2.0 / 3.0).abs() < 1e-12);
    }
}
