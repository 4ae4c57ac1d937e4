//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use convrag_core::eval::Qrels;
use convrag_core::lexical::Tokenizer;
use convrag_core::pipeline::{Backends, Engine};
use convrag_core::rewrite::Turn;
use convrag_core::{Conversation, Corpus, Domain, Passage, PipelineConfig};

pub const PASSAGES_PER_DOMAIN: usize = 50;
pub const CONVERSATIONS_PER_DOMAIN: usize = 5;

/// Synthetic corpora, conversations and qrels where each conversation's final
/// question is the exact text of one passage in its own domain.
pub struct Planted {
    pub corpora: Vec<Corpus>,
    pub conversations: Vec<Conversation>,
    pub qrels: Qrels,
    /// `(query_id, passage_id)` of every planted answer.
    pub answers: Vec<(String, String)>,
}

fn sentence(rng: &mut ChaCha8Rng, prefix: &str, vocab: usize, len: usize) -> String {
    (0..len)
        .map(|_| format!("{prefix}{}", rng.gen_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn planted(seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpora = Vec::new();
    let mut conversations = Vec::new();
    let mut qrels = Qrels::default();
    let mut answers = Vec::new();
    for name in Domain::CANONICAL {
        let domain = Domain::new(name).unwrap();
        let passages: Vec<Passage> = (0..PASSAGES_PER_DOMAIN)
            .map(|i| Passage {
                id: format!("{name}-p{i:03}"),
                doc_id: format!("{name}-d{}", i / 5),
                text: sentence(&mut rng, "w", 400, 12),
                domain: domain.clone(),
            })
            .collect();
        let mut picks: Vec<usize> = (0..PASSAGES_PER_DOMAIN).collect();
        picks.shuffle(&mut rng);
        for (j, &pick) in picks.iter().take(CONVERSATIONS_PER_DOMAIN).enumerate() {
            let query_id = format!("{name}-q{j}");
            let mut turns = Vec::new();
            // Every other conversation has history; its words never occur in
            // the corpus, so history expansion cannot promote another passage.
            if j % 2 == 1 {
                turns.push(Turn::user(format!(
                    "Tell me about Zorblat {}",
                    sentence(&mut rng, "h", 50, 4)
                )));
                turns.push(Turn::agent(sentence(&mut rng, "h", 50, 6)));
            }
            turns.push(Turn::user(passages[pick].text.clone()));
            qrels.insert(query_id.clone(), passages[pick].id.clone(), 1);
            answers.push((query_id.clone(), passages[pick].id.clone()));
            conversations.push(Conversation {
                id: format!("conv-{query_id}"),
                domain: domain.clone(),
                query_id,
                turns,
            });
        }
        corpora.push(Corpus::from_passages(domain, passages).unwrap());
    }
    Planted {
        corpora,
        conversations,
        qrels,
        answers,
    }
}

/// Small stub configuration: fast hashing embedder, two workers.
pub fn stub_config() -> PipelineConfig {
    let mut config = PipelineConfig::default();
    config.dense.dim = 64;
    config.workers = 2;
    config
}

pub fn engine_with(config: PipelineConfig, corpora: Vec<Corpus>, backends: Backends) -> Engine {
    let tokenizer = Tokenizer::english();
    Engine::build_from_corpora(config, tokenizer, corpora, backends).unwrap()
}

pub fn stub_engine(config: PipelineConfig, corpora: Vec<Corpus>) -> Engine {
    let backends = Backends::stubs(&config, &Tokenizer::english());
    engine_with(config, corpora, backends)
}
