//! Planted-topic synthetic corpora for experiments and tests.
//!
//! Every topic owns a disjoint vocabulary of pronounceable pseudo-words plus
//! a head word. Documents mix topic words with a shared background
//! vocabulary; candidate queries always contain their topic's head word.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::tokenize::Stopwords;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub documents: usize,
    pub topics: usize,
    pub queries: usize,
    pub topic_vocabulary: usize,
    pub background_vocabulary: usize,
    pub doc_words: usize,
    /// Share of each document drawn from the background vocabulary.
    pub background_share: f64,
    pub query_words: usize,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            documents: 2000,
            topics: 20,
            queries: 300,
            topic_vocabulary: 30,
            background_vocabulary: 60,
            doc_words: 40,
            background_share: 0.25,
            query_words: 4,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub queries: Vec<String>,
    pub doc_topics: Vec<usize>,
    pub query_topics: Vec<usize>,
    /// Per topic: head word first, then the rest of its vocabulary.
    pub vocabularies: Vec<Vec<String>>,
    pub background: Vec<String>,
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

fn fresh_words(n: usize, rng: &mut ChaCha8Rng, used: &mut HashSet<String>, stopwords: &Stopwords) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng);
        if !stopwords.contains(&w) && used.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    assert!(spec.topics >= 1 && spec.topic_vocabulary >= spec.query_words.max(2));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let stopwords = Stopwords::english();
    let mut used = HashSet::new();
    let vocabularies: Vec<Vec<String>> = (0..spec.topics)
        .map(|_| fresh_words(spec.topic_vocabulary, &mut rng, &mut used, &stopwords))
        .collect();
    let background = fresh_words(spec.background_vocabulary.max(1), &mut rng, &mut used, &stopwords);

    let mut documents = Vec::with_capacity(spec.documents);
    let mut doc_topics = Vec::with_capacity(spec.documents);
    for i in 0..spec.documents {
        let topic = i % spec.topics;
        let words: Vec<&str> = (0..spec.doc_words)
            .map(|_| {
                if rng.random_bool(spec.background_share) {
                    background.choose(&mut rng).unwrap().as_str()
                } else {
                    vocabularies[topic].choose(&mut rng).unwrap().as_str()
                }
            })
            .collect();
        documents.push(Document::new(format!("doc-{i:05}"), words.join(" ")));
        doc_topics.push(topic);
    }

    let mut queries = Vec::with_capacity(spec.queries);
    let mut query_topics = Vec::with_capacity(spec.queries);
    let mut seen = HashSet::new();
    let mut i = 0;
    while queries.len() < spec.queries {
        let topic = i % spec.topics;
        i += 1;
        let vocab = &vocabularies[topic];
        let mut rest: Vec<&String> = vocab[1..].iter().collect();
        rest.shuffle(&mut rng);
        let mut words = vec![vocab[0].as_str()];
        words.extend(rest.iter().take(spec.query_words.saturating_sub(1)).map(|s| s.as_str()));
        let q = words.join(" ");
        if seen.insert(q.clone()) {
            queries.push(q);
            query_topics.push(topic);
        }
    }

    SyntheticCorpus {
        documents,
        queries,
        doc_topics,
        query_topics,
        vocabularies,
        background,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let spec = SyntheticSpec {
            documents: 100,
            queries: 40,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec);
        assert_eq!(a.documents.len(), 100);
        assert_eq!(a.queries.len(), 40);
        assert_eq!(a, generate(&spec));
        let distinct: HashSet<_> = a.queries.iter().collect();
        assert_eq!(distinct.len(), 40);
    }
}
