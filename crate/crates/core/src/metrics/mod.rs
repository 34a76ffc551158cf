//! Seeding-quality and behavioral metrics plus significance statistics.

pub mod reformulation;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError};
use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::seeding::kmeans::ClusterAssignment;
use crate::seeding::SeedRecord;
use crate::simulation::trace::Trajectory;
use crate::tokenize::Stopwords;

pub use reformulation::{
    classify_reformulation, default_meta_terms, query_length_delta, LengthDelta, Reformulation, DEFAULT_META_TERMS,
};
pub use stats::{
    chi_squared, cohens_d, holm_bonferroni, mann_whitney, significance_tests, ChiSquaredTest, MannWhitney,
    PairwiseTest,
};

/// Retrieval depth for redundancy and corpus coverage.
pub const FOOTPRINT_DEPTH: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("pairwise seeding metrics need at least 2 seeds")]
    SingleSeed,
    #[error("no {0} to measure")]
    EmptyInput(&'static str),
    #[error("pooled standard deviation is zero")]
    ZeroVariance,
    #[error("{0}")]
    InsufficientSamples(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedingMetricsReport {
    pub cluster_coverage: f64,
    pub document_redundancy: f64,
    pub semantic_diversity: f64,
    pub corpus_coverage_at_100: f64,
    pub runs: usize,
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets scoring 0.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn footprint(corpus: &Corpus, query: &str) -> Result<BTreeSet<String>, CorpusError> {
    match corpus.retrieve(query, FOOTPRINT_DEPTH) {
        Ok(r) => Ok(r.hits.into_iter().map(|h| h.doc_id).collect()),
        Err(CorpusError::EmptyQuery(_)) => Ok(BTreeSet::new()),
        Err(e) => Err(e),
    }
}

fn mean_pairwise<T>(items: &[T], f: impl Fn(&T, &T) -> Result<f64, MetricsError>) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            sum += f(&items[i], &items[j])?;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Seed-set quality against a clustering of the candidate pool.
pub fn seeding_metrics(
    seeds: &[SeedRecord],
    assignment: &ClusterAssignment,
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
) -> Result<SeedingMetricsReport, MetricsError> {
    if seeds.len() < 2 {
        return Err(MetricsError::SingleSeed);
    }
    let queries: Vec<String> = seeds.iter().map(|s| s.query.clone()).collect();
    let embeddings = provider.embed(&queries)?;
    seeding_metrics_from_embeddings(&queries, &embeddings, assignment, corpus)
}

/// As [`seeding_metrics`], with the seed embeddings supplied.
pub fn seeding_metrics_from_embeddings(
    queries: &[String],
    embeddings: &[EmbeddingVector],
    assignment: &ClusterAssignment,
    corpus: &Corpus,
) -> Result<SeedingMetricsReport, MetricsError> {
    if queries.len() < 2 {
        return Err(MetricsError::SingleSeed);
    }
    let covered: BTreeSet<usize> = embeddings.iter().map(|e| assignment.nearest_centroid(e)).collect();
    let cluster_coverage = covered.len() as f64 / assignment.k().max(1) as f64;

    let footprints = queries
        .iter()
        .map(|q| footprint(corpus, q))
        .collect::<Result<Vec<_>, _>>()?;
    let document_redundancy = mean_pairwise(&footprints, |a, b| Ok(jaccard(a, b)))?;
    let reached: HashSet<&String> = footprints.iter().flatten().collect();
    let corpus_coverage_at_100 = reached.len() as f64 / corpus.len() as f64;

    let semantic_diversity = mean_pairwise(embeddings, |a, b| Ok((1.0 - cosine_similarity(a, b)?).clamp(0.0, 2.0)))?;

    Ok(SeedingMetricsReport {
        cluster_coverage,
        document_redundancy,
        semantic_diversity,
        corpus_coverage_at_100,
        runs: 1,
    })
}

/// Mean of several runs' reports.
pub fn average_reports(reports: &[SeedingMetricsReport]) -> Option<SeedingMetricsReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&SeedingMetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(SeedingMetricsReport {
        cluster_coverage: avg(|r| r.cluster_coverage),
        document_redundancy: avg(|r| r.document_redundancy),
        semantic_diversity: avg(|r| r.semantic_diversity),
        corpus_coverage_at_100: avg(|r| r.corpus_coverage_at_100),
        runs: reports.iter().map(|r| r.runs).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub trajectories: usize,
    pub exploration_breadth: usize,
    pub retrieval_events: usize,
    pub retrieval_redundancy: f64,
    pub query_count: usize,
    pub reformulation_count: usize,
    pub mean_query_length_initial: Option<f64>,
    pub mean_query_length_reformulated: Option<f64>,
    /// Fractions over consecutive search pairs; all zero when there are none.
    pub reformulation_distribution: BTreeMap<Reformulation, f64>,
}

fn search_calls(t: &Trajectory) -> impl Iterator<Item = (&str, &[String])> {
    t.tool_calls.iter().filter(|c| c.tool == "search").map(|c| {
        let q = c.input.get("query").and_then(|v| v.as_str()).unwrap_or("");
        (q, c.doc_ids.as_slice())
    })
}

/// Consecutive search queries within each trajectory.
pub fn reformulation_pairs(trajectories: &[Trajectory]) -> Vec<(String, String)> {
    trajectories
        .iter()
        .flat_map(|t| {
            let qs: Vec<&str> = search_calls(t).map(|(q, _)| q).collect();
            qs.windows(2).map(|w| (w[0].to_string(), w[1].to_string())).collect::<Vec<_>>()
        })
        .collect()
}

pub fn behavior_metrics(
    trajectories: &[Trajectory],
    stopwords: &Stopwords,
    meta_terms: &BTreeSet<String>,
) -> Result<BehaviorReport, MetricsError> {
    if trajectories.is_empty() {
        return Err(MetricsError::EmptyInput("trajectories"));
    }
    let mut unique: HashSet<&str> = HashSet::new();
    let mut events = 0usize;
    let mut initial_lengths = Vec::new();
    let mut later_lengths = Vec::new();
    for t in trajectories {
        for (i, (query, docs)) in search_calls(t).enumerate() {
            events += docs.len();
            unique.extend(docs.iter().map(String::as_str));
            let words = query.split_whitespace().count() as f64;
            if i == 0 {
                initial_lengths.push(words);
            } else {
                later_lengths.push(words);
            }
        }
    }
    let pairs = reformulation_pairs(trajectories);
    let mut counts: BTreeMap<Reformulation, usize> = Reformulation::ALL.iter().map(|&r| (r, 0)).collect();
    for (old, new) in &pairs {
        *counts.entry(classify_reformulation(old, new, stopwords, meta_terms)).or_default() += 1;
    }
    let denom = pairs.len();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(BehaviorReport {
        trajectories: trajectories.len(),
        exploration_breadth: unique.len(),
        retrieval_events: events,
        retrieval_redundancy: if events == 0 { 0.0 } else { 1.0 - unique.len() as f64 / events as f64 },
        query_count: initial_lengths.len() + later_lengths.len(),
        reformulation_count: denom,
        mean_query_length_initial: mean(&initial_lengths),
        mean_query_length_reformulated: mean(&later_lengths),
        reformulation_distribution: counts
            .into_iter()
            .map(|(k, c)| (k, if denom == 0 { 0.0 } else { c as f64 / denom as f64 }))
            .collect(),
    })
}
