use std::collections::BTreeSet;

use agentsim_core::{tokenize, Bm25Params, Corpus, CorpusError, Document, Stopwords};
use proptest::prelude::*;

fn manhattan() -> Vec<Document> {
    vec![
        Document::new(
            "d1",
            "The Manhattan Project was a research and development undertaking during World War II \
             that produced the first nuclear weapons. The project was led by the United States.",
        ),
        Document::new(
            "d2",
            "Manhattan is the most densely populated borough of New York City.",
        ),
        Document::new(
            "d3",
            "Oppenheimer directed the Los Alamos Laboratory, a key site of the Manhattan Project project work.",
        ),
    ]
}

/// Scores every document from scratch: no index, no shared code beyond tokenization.
fn brute_force_bm25(docs: &[Document], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let sw = Stopwords::english();
    let bags: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.text, &sw).content_tokens).collect();
    let n = docs.len() as f64;
    let avgdl = bags.iter().map(|b| b.len() as f64).sum::<f64>() / n;
    let terms: BTreeSet<String> = tokenize(query, &sw).content_tokens.into_iter().collect();
    let mut out = Vec::new();
    for (doc, bag) in docs.iter().zip(&bags) {
        let mut score = 0.0;
        let mut matched = false;
        for t in &terms {
            let df = bags.iter().filter(|bg| bg.contains(t)).count() as f64;
            let tf = bag.iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * bag.len() as f64 / avgdl));
        }
        if matched {
            out.push((doc.doc_id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

#[test]
fn bm25_matches_brute_force_oracle() {
    let docs = manhattan();
    let corpus = Corpus::build(docs.clone(), Stopwords::english(), Bm25Params::default()).unwrap();
    for query in ["manhattan project", "Manhattan", "nuclear weapons project", "new york borough laboratory"] {
        let got = corpus.retrieve(query, 10).unwrap();
        let want = brute_force_bm25(&docs, query, 1.2, 0.75);
        assert_eq!(got.hits.len(), want.len(), "{query}");
        for (h, (id, s)) in got.hits.iter().zip(&want) {
            assert_eq!(&h.doc_id, id, "{query}");
            assert!((h.score - s).abs() < 1e-9, "{query}: {} vs {s}", h.score);
        }
    }
}

#[test]
fn manhattan_project_ranking() {
    let corpus = Corpus::build(manhattan(), Stopwords::english(), Bm25Params::default()).unwrap();
    let r = corpus.retrieve("manhattan project", 10).unwrap();
    let ids: Vec<&str> = r.doc_ids().collect();
    assert_eq!(ids.len(), 3);
    assert_ne!(ids[0], "d2");
    assert_eq!(ids[2], "d2");
}

#[test]
fn two_term_doc_beats_one_term_doc() {
    let corpus = Corpus::build(
        vec![Document::new("a", "alpha beta gamma"), Document::new("b", "alpha delta gamma")],
        Stopwords::english(),
        Bm25Params::default(),
    )
    .unwrap();
    let r = corpus.retrieve("alpha beta", 5).unwrap();
    assert_eq!(r.hits[0].doc_id, "a");
}

#[test]
fn build_errors() {
    let sw = Stopwords::english;
    assert!(matches!(
        Corpus::build(vec![], sw(), Bm25Params::default()),
        Err(CorpusError::EmptyCorpus)
    ));
    assert!(matches!(
        Corpus::build(
            vec![Document::new("x", "a b"), Document::new("x", "c d")],
            sw(),
            Bm25Params::default()
        ),
        Err(CorpusError::DuplicateDocId(_))
    ));
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "apple", "river", "stone", "cloud", "paper", "glass", "tiger", "ocean", "maple", "copper", "violet",
        "ember",
    ])
    .prop_map(str::to_string)
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Document>> {
    prop::collection::vec(prop::collection::vec(word(), 1..12), 1..15).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(i, words)| Document::new(format!("d{i:02}"), words.join(" ")))
            .collect()
    })
}

proptest! {
    #[test]
    fn retrieval_is_deterministic(docs in corpus_strategy(), q in prop::collection::vec(word(), 1..4)) {
        let q = q.join(" ");
        let a = Corpus::build(docs.clone(), Stopwords::english(), Bm25Params::default()).unwrap();
        let b = Corpus::build(docs, Stopwords::english(), Bm25Params::default()).unwrap();
        let ra = serde_json::to_string(&a.retrieve(&q, 5).unwrap()).unwrap();
        let rb = serde_json::to_string(&b.retrieve(&q, 5).unwrap()).unwrap();
        prop_assert_eq!(ra, rb);
    }

    #[test]
    fn deeper_retrieval_extends_shallower(docs in corpus_strategy(), q in prop::collection::vec(word(), 1..4), k in 1usize..10) {
        let c = Corpus::build(docs, Stopwords::english(), Bm25Params::default()).unwrap();
        let q = q.join(" ");
        let short = c.retrieve(&q, k).unwrap().hits;
        let long = c.retrieve(&q, k + 1).unwrap().hits;
        prop_assert!(short.len() <= k);
        prop_assert_eq!(&long[..short.len()], &short[..]);
        for w in long.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id));
            prop_assert!(w[0].score.is_finite());
        }
    }

    #[test]
    fn every_content_token_finds_its_document(docs in corpus_strategy()) {
        let sw = Stopwords::english();
        let c = Corpus::build(docs.clone(), sw.clone(), Bm25Params::default()).unwrap();
        for d in &docs {
            for t in tokenize(&d.text, &sw).content_tokens {
                let r = c.retrieve(&t, docs.len()).unwrap();
                prop_assert!(r.doc_ids().any(|id| id == d.doc_id));
            }
        }
        let mean = c.doc_lengths().iter().map(|&l| l as f64).sum::<f64>() / c.len() as f64;
        prop_assert!((c.avg_doc_length() - mean).abs() < 1e-12);
    }
}
