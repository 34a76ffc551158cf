use agentsim_core::metrics::stats::midranks;
use agentsim_core::metrics::{
    behavior_metrics, chi_squared, cohens_d, default_meta_terms, holm_bonferroni, mann_whitney, seeding_metrics,
    significance_tests, MetricsError, Reformulation,
};
use agentsim_core::seeding::{select_seeds, SeedingConfig, Strategy as SeedStrategy};
use agentsim_core::simulation::{Outcome, ToolCall, Trajectory};
use agentsim_core::synthetic::{generate, SyntheticSpec};
use agentsim_core::{Bm25Params, Corpus, HashingProvider, Stopwords};
use approx::assert_relative_eq;
use proptest::prelude::*;

// Reference values from scipy 1.15 (mannwhitneyu asymptotic with continuity,
// chi2_contingency without correction) and statsmodels multipletests(holm).
#[test]
fn mann_whitney_matches_reference() {
    let a = [1.2, 3.4, 2.2, 5.0, 5.0, 0.7, 3.3];
    let b = [4.1, 5.0, 6.2, 3.4, 7.7, 8.1];
    let mw = mann_whitney(&a, &b).unwrap();
    assert_relative_eq!(mw.u1, 5.5, epsilon = 1e-12);
    assert_relative_eq!(mw.u, 5.5, epsilon = 1e-12);
    assert_relative_eq!(mw.p, 0.030948989790008933, epsilon = 1e-9);
}

#[test]
fn chi_squared_matches_reference() {
    let t = chi_squared(&[vec![12.0, 5.0, 9.0], vec![7.0, 14.0, 3.0]]).unwrap();
    assert_relative_eq!(t.statistic, 8.512567476383268, epsilon = 1e-9);
    assert_relative_eq!(t.p, 0.014174882222918836, epsilon = 1e-9);
    assert_eq!(t.dof, 2);
    assert_relative_eq!(t.cramers_v, 0.41261525605297894, epsilon = 1e-9);
}

#[test]
fn holm_matches_reference() {
    assert_eq!(holm_bonferroni(&[0.001, 0.02, 0.03, 0.2, 0.012], 0.05), [true, false, false, false, true]);
}

#[test]
fn significance_needs_two_samples_per_group() {
    let groups = vec![("a".to_string(), vec![1.0, 2.0]), ("b".to_string(), vec![3.0])];
    assert!(matches!(significance_tests(&groups, 0.05), Err(MetricsError::InsufficientSamples(_))));
}

fn u_by_pair_counting(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..12).prop_map(|v| v as f64 / 2.0), 1..15)
}

proptest! {
    #[test]
    fn u_equals_pair_count(a in sample(), b in sample()) {
        let mw = mann_whitney(&a, &b).unwrap();
        let u1 = u_by_pair_counting(&a, &b);
        prop_assert!((mw.u1 - u1).abs() < 1e-9);
        prop_assert!((mw.u - u1.min(a.len() as f64 * b.len() as f64 - u1)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&mw.p));
        let swapped = mann_whitney(&b, &a).unwrap();
        prop_assert!((swapped.p - mw.p).abs() < 1e-12);
    }

    #[test]
    fn midranks_sum_is_triangular(v in sample()) {
        let n = v.len() as f64;
        prop_assert!((midranks(&v).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn cohens_d_is_affine_invariant(a in prop::collection::vec(-50.0f64..50.0, 2..10), b in prop::collection::vec(-50.0f64..50.0, 2..10), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let d = cohens_d(&a, &b);
        let f = |x: &Vec<f64>| x.iter().map(|v| v * scale + shift).collect::<Vec<_>>();
        let d2 = cohens_d(&f(&a), &f(&b));
        if let (Ok(d), Ok(d2)) = (d, d2) {
            prop_assert!(d >= 0.0);
            prop_assert!((d - d2).abs() < 1e-6 * d.max(1.0));
        }
    }

    #[test]
    fn holm_sits_between_bonferroni_and_uncorrected(p in prop::collection::vec(0.0f64..0.2, 0..12), alpha in 0.01f64..0.1) {
        let m = p.len().max(1) as f64;
        let holm = holm_bonferroni(&p, alpha);
        let looser = holm_bonferroni(&p, alpha * 1.5);
        for i in 0..p.len() {
            if p[i] <= alpha / m {
                prop_assert!(holm[i]);
            }
            if holm[i] {
                prop_assert!(p[i] <= alpha);
                prop_assert!(looser[i]);
            }
        }
    }

    #[test]
    fn chi_squared_ranges(cells in prop::collection::vec(1u32..30, 6)) {
        let t = chi_squared(&[
            cells[..3].iter().map(|&c| c as f64).collect(),
            cells[3..].iter().map(|&c| c as f64).collect(),
        ]).unwrap();
        prop_assert!(t.statistic >= 0.0);
        prop_assert!((0.0..=1.0).contains(&t.p));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&t.cramers_v));
    }
}

#[test]
fn seeding_metrics_ranges_and_order_invariance() {
    let syn = generate(&SyntheticSpec {
        documents: 300,
        topics: 8,
        queries: 80,
        rng_seed: 5,
        ..SyntheticSpec::default()
    });
    let corpus = Corpus::build(syn.documents, Stopwords::english(), Bm25Params::default()).unwrap();
    let p = HashingProvider::default();
    for strategy in SeedStrategy::ALL {
        let cfg = SeedingConfig {
            strategy,
            clusters: 8,
            ..SeedingConfig::with_budget(12)
        };
        let sel = select_seeds(&syn.queries, &corpus, &cfg, &p).unwrap();
        let r = seeding_metrics(&sel.seeds, &sel.assignment, &corpus, &p).unwrap();
        for v in [r.cluster_coverage, r.document_redundancy, r.semantic_diversity, r.corpus_coverage_at_100] {
            assert!((0.0..=1.0).contains(&v), "{strategy}: {r:?}");
        }
        let mut reversed = sel.seeds.clone();
        reversed.reverse();
        let r2 = seeding_metrics(&reversed, &sel.assignment, &corpus, &p).unwrap();
        assert_relative_eq!(r.document_redundancy, r2.document_redundancy, epsilon = 1e-12);
        assert_relative_eq!(r.semantic_diversity, r2.semantic_diversity, epsilon = 1e-12);
        assert_eq!(r.cluster_coverage, r2.cluster_coverage);
        assert_eq!(r.corpus_coverage_at_100, r2.corpus_coverage_at_100);
        assert!(matches!(
            seeding_metrics(&sel.seeds[..1], &sel.assignment, &corpus, &p),
            Err(MetricsError::SingleSeed)
        ));
    }
}

fn trajectory(queries: &[(&str, &[&str])]) -> Trajectory {
    let value = serde_json::json!({
        "trace_id": "t-x0",
        "seed": {
            "seed_id": "t", "query": queries[0].0, "cluster_id": 0, "novelty": 1.0,
            "retrieved_doc_ids": [], "strategy": "random", "rank": 0
        },
        "tool_calls": [],
        "final": null,
        "outcome": "abstained"
    });
    let mut t: Trajectory = serde_json::from_value(value).unwrap();
    t.outcome = Outcome::Abstained;
    t.tool_calls = queries
        .iter()
        .map(|(q, docs)| ToolCall {
            tool: "search".into(),
            input: serde_json::json!({ "query": q }),
            output: String::new(),
            doc_ids: docs.iter().map(|d| d.to_string()).collect(),
        })
        .collect();
    t
}

#[test]
fn behavior_distribution_sums_to_one() {
    let ts = vec![
        trajectory(&[("manhattan project", &["d1", "d2"]), ("manhattan project history", &["d2", "d3"])]),
        trajectory(&[("trinity test", &["d4"]), ("oppenheimer los alamos", &["d4", "d5"]), ("find oppenheimer", &["d5"])]),
    ];
    let r = behavior_metrics(&ts, &Stopwords::english(), &default_meta_terms()).unwrap();
    assert_eq!(r.reformulation_count, 3);
    assert_eq!(r.retrieval_events, 8);
    assert_eq!(r.exploration_breadth, 5);
    assert_relative_eq!(r.retrieval_redundancy, 1.0 - 5.0 / 8.0);
    let total: f64 = r.reformulation_distribution.values().sum();
    assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    assert_eq!(r.reformulation_distribution.len(), Reformulation::ALL.len());
    assert_relative_eq!(r.mean_query_length_initial.unwrap(), 2.0);
    assert!(matches!(
        behavior_metrics(&[], &Stopwords::english(), &default_meta_terms()),
        Err(MetricsError::EmptyInput(_))
    ));
}
