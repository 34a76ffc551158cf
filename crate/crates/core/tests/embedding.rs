use agentsim_core::embedding::EmbeddingError;
use agentsim_core::{cosine_similarity, EmbeddingProvider, EmbeddingVector, HashingProvider};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_word(rng: &mut ChaCha8Rng) -> String {
    (0..6).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
}

// Measured over 100 pairs of 5-word texts with disjoint vocabularies
// (seed 1): 97 pairs below 0.2, mean 0.030, max 0.222.
#[test]
fn disjoint_texts_are_nearly_orthogonal() {
    let p = HashingProvider::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sims = Vec::new();
    for _ in 0..100 {
        let mut words: Vec<String> = Vec::new();
        while words.len() < 10 {
            let w = random_word(&mut rng);
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let e = p.embed(&[words[..5].join(" "), words[5..].join(" ")]).unwrap();
        sims.push(cosine_similarity(&e[0], &e[1]).unwrap());
    }
    let below = sims.iter().filter(|s| **s < 0.2).count();
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    assert!(below >= 95, "{below}");
    assert!(mean < 0.05, "{mean}");
}

#[test]
fn identical_text_identical_vector() {
    let p = HashingProvider::default();
    let e = p.embed(&["trinity test site".into(), "trinity test site".into()]).unwrap();
    assert_eq!(e[0], e[1]);
    assert_eq!(e[0].dim(), 256);
}

#[test]
fn cosine_edge_cases() {
    let v = EmbeddingVector::normalized(vec![0.6, 0.8]).unwrap();
    let w = EmbeddingVector::normalized(vec![-0.8, 0.6]).unwrap();
    assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    assert!(cosine_similarity(&v, &w).unwrap().abs() < 1e-12);
    assert!((cosine_similarity(&v, &v.negated()).unwrap() + 1.0).abs() < 1e-12);
    let x = EmbeddingVector::normalized(vec![1.0, 0.0, 0.0]).unwrap();
    assert!(matches!(cosine_similarity(&v, &x), Err(EmbeddingError::DimensionMismatch { .. })));
}

#[test]
fn empty_text_rejected() {
    let p = HashingProvider::default();
    assert!(matches!(p.embed(&["ok".into(), "  ".into()]), Err(EmbeddingError::EmptyText(1))));
}

proptest! {
    #[test]
    fn vectors_are_unit_norm(text in "[a-z ]{1,40}[a-z]") {
        let e = HashingProvider::default().embed(&[text]).unwrap();
        let norm: f64 = e[0].values().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-6);
        prop_assert!(e[0].values().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn cosine_is_symmetric(a in "[a-z]{1,8}( [a-z]{1,8}){0,5}", b in "[a-z]{1,8}( [a-z]{1,8}){0,5}") {
        let e = HashingProvider::default().embed(&[a, b]).unwrap();
        let ab = cosine_similarity(&e[0], &e[1]).unwrap();
        let ba = cosine_similarity(&e[1], &e[0]).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
    }
}
