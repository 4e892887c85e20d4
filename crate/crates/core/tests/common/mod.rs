//! Synthetic corpora and small configurations shared by the integration
//! tests.
#![allow(dead_code)]

use dahcrf_core::config::{ModelConfig, TopicSource, Variant};
use dahcrf_core::corpus::{Conversation, Utterance};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

pub fn utt(tokens: &[&str], da: &str, topic: Option<&str>) -> Utterance {
    Utterance {
        speaker: None,
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        da_label: da.to_string(),
        topic_label: topic.map(str::to_string),
    }
}

pub fn conv(id: &str, utterances: Vec<Utterance>) -> Conversation {
    Conversation {
        id: id.to_string(),
        utterances,
    }
}

/// Small dimensions so that training runs in seconds on one core.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        topic_source: if variant.has_topic() {
            TopicSource::LdaUtt
        } else {
            TopicSource::None
        },
        hidden: 12,
        word_dim: 12,
        char_dim: 4,
        char_features: 6,
        attention_dim: 12,
        max_batch: 10,
        epochs: 30,
        patience: 100,
        lr: 0.01,
        vocab_coverage: 1.0,
        ..ModelConfig::default()
    }
}

const FILLER: [&str; 12] = [
    "the", "a", "so", "and", "um", "well", "like", "yeah", "i", "you", "it", "that",
];

/// Conversations whose DA label is announced by an indicator token
/// `cue{label}` somewhere in the utterance, among filler words.
pub fn planted_da_corpus(n: usize, labels: usize, seed: u64) -> Vec<Conversation> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|c| {
            let len = rng.random_range(2..=5);
            let utts = (0..len)
                .map(|_| {
                    let label = rng.random_range(0..labels);
                    let cue = format!("cue{label}");
                    let mut toks: Vec<String> = (0..rng.random_range(1..=4))
                        .map(|_| FILLER.choose(&mut rng).unwrap().to_string())
                        .collect();
                    let at = rng.random_range(0..=toks.len());
                    toks.insert(at, cue);
                    let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
                    utt(&toks, &format!("d{label}"), None)
                })
                .collect();
            conv(&format!("c{c}"), utts)
        })
        .collect()
}

/// Words carrying no topic signal; the LDA fit treats them as stopwords.
pub fn topic_stopwords() -> std::collections::BTreeSet<String> {
    FILLER.iter().chain(&["ok", "no"]).map(|w| w.to_string()).collect()
}

/// Two latent topics with disjoint vocabularies. Each conversation has one
/// topic; every utterance holds one of two ambiguous cue words, filler and,
/// with probability `p_topic`, one of the topic's words. The DA label is
/// determined by the cue and the conversation topic together.
pub fn topic_da_corpus(n: usize, p_topic: f64, seed: u64, prefix: &str) -> Vec<Conversation> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|c| {
            let topic = rng.random_range(0..2);
            let len = rng.random_range(3..=6);
            let utts = (0..len)
                .map(|_| {
                    let cue = rng.random_range(0..2);
                    let mut toks: Vec<String> = (0..rng.random_range(1..=3))
                        .map(|_| FILLER.choose(&mut rng).unwrap().to_string())
                        .collect();
                    if rng.random_bool(p_topic) {
                        let word = format!("{}{}", ["sport", "food"][topic], rng.random_range(0..6));
                        let at = rng.random_range(0..=toks.len());
                        toks.insert(at, word);
                    }
                    let at = rng.random_range(0..=toks.len());
                    toks.insert(at, ["ok", "no"][cue].to_string());
                    let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
                    utt(&toks, &format!("d{}", 2 * topic + cue), None)
                })
                .collect();
            conv(&format!("{prefix}{c}"), utts)
        })
        .collect()
}
