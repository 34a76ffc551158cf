//! Seed selection: corpus-aware (cluster coverage + novelty filter + MMR) and
//! the random, stratified and DPP baselines.
//!
//! Every strategy emits [`SeedRecord`]s with the same footprint fields: the
//! top-`seed_retrieval_depth` documents of the query and its novelty against
//! the documents already reached by earlier seeds in selection order.

pub mod dpp;
pub mod kmeans;
pub mod mmr;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, CorpusError};
use crate::embedding::{EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::jsonl::{self, JsonlError};

pub use kmeans::{cluster_queries, ClusterAssignment};
pub use mmr::{mmr_next, MmrCandidate};

#[derive(Debug, thiserror::Error)]
pub enum SeedingError {
    #[error("candidate query pool is empty")]
    EmptyQueryPool,
    #[error("no MMR candidates")]
    NoCandidates,
    #[error("invalid seeding config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    CorpusAware,
    Random,
    Stratified,
    Dpp,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Self::CorpusAware, Self::Random, Self::Stratified, Self::Dpp];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CorpusAware => "corpus_aware",
            Self::Random => "random",
            Self::Stratified => "stratified",
            Self::Dpp => "dpp",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected corpus_aware, random, stratified or dpp)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedingConfig {
    #[serde(default = "defaults::clusters")]
    pub clusters: usize,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    pub budget: usize,
    #[serde(default = "defaults::strategy")]
    pub strategy: Strategy,
    #[serde(default = "defaults::seed_retrieval_depth")]
    pub seed_retrieval_depth: usize,
    /// Overwritten by the run-level seed when loaded from a run config.
    #[serde(default)]
    pub rng_seed: u64,
}

mod defaults {
    use super::Strategy;
    pub fn clusters() -> usize {
        50
    }
    pub fn tau() -> f64 {
        0.4
    }
    pub fn lambda() -> f64 {
        0.7
    }
    pub fn strategy() -> Strategy {
        Strategy::CorpusAware
    }
    pub fn seed_retrieval_depth() -> usize {
        10
    }
}

impl SeedingConfig {
    pub fn with_budget(budget: usize) -> Self {
        Self {
            clusters: defaults::clusters(),
            tau: defaults::tau(),
            lambda: defaults::lambda(),
            budget,
            strategy: defaults::strategy(),
            seed_retrieval_depth: defaults::seed_retrieval_depth(),
            rng_seed: 0,
        }
    }

    /// Range problems as `(field, message)` pairs.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.tau) {
            out.push(("tau".into(), format!("must be in [0, 1], got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            out.push(("lambda".into(), format!("must be in [0, 1], got {}", self.lambda)));
        }
        if self.clusters == 0 {
            out.push(("clusters".into(), "must be >= 1".into()));
        }
        if self.seed_retrieval_depth == 0 {
            out.push(("seed_retrieval_depth".into(), "must be >= 1".into()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed_id: String,
    pub query: String,
    pub cluster_id: usize,
    pub novelty: f64,
    pub retrieved_doc_ids: Vec<String>,
    pub strategy: String,
    pub rank: usize,
}

/// Stable id derived from the query text.
pub fn seed_id_for(query: &str) -> String {
    let digest = Sha256::digest(query.as_bytes());
    format!("seed-{}", &hex::encode(digest)[..12])
}

pub fn write_seeds(path: &Path, seeds: &[SeedRecord]) -> std::io::Result<usize> {
    jsonl::write_all(path, seeds)
}

pub fn read_seeds(path: &Path) -> Result<Vec<SeedRecord>, JsonlError> {
    jsonl::read_all(path)
}

/// `|D_q \ seen| / |D_q|`, and 0 for an empty retrieval.
pub fn novelty<'a>(retrieved: impl IntoIterator<Item = &'a str>, seen: &BTreeSet<String>) -> f64 {
    let (mut total, mut fresh) = (0usize, 0usize);
    for d in retrieved {
        total += 1;
        if !seen.contains(d) {
            fresh += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        fresh as f64 / total as f64
    }
}

/// Retrieves `query` at `depth` and scores its novelty against `seen`.
pub fn compute_novelty(
    query: &str,
    corpus: &Corpus,
    seen: &BTreeSet<String>,
    depth: usize,
) -> Result<f64, CorpusError> {
    let r = corpus.retrieve(query, depth)?;
    Ok(novelty(r.doc_ids(), seen))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeedingState {
    /// Indices into the query pool, in selection order.
    pub selected: Vec<usize>,
    pub seen_docs: BTreeSet<String>,
    /// Unconsumed candidate indices per cluster (corpus-aware only).
    pub remaining: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct SeedSelection {
    pub seeds: Vec<SeedRecord>,
    /// The deduplicated query pool the indices refer to.
    pub queries: Vec<String>,
    pub embeddings: Vec<EmbeddingVector>,
    pub assignment: ClusterAssignment,
    pub state: SeedingState,
    pub warnings: Vec<String>,
}

impl SeedSelection {
    pub fn seed_embeddings(&self) -> Vec<&EmbeddingVector> {
        self.state.selected.iter().map(|&i| &self.embeddings[i]).collect()
    }
}

/// Memoized top-`depth` retrievals of the query pool. Unretrievable queries
/// (no content tokens) have an empty footprint.
struct Footprints<'a> {
    corpus: &'a Corpus,
    depth: usize,
    cache: Vec<Option<Vec<String>>>,
}

impl<'a> Footprints<'a> {
    fn new(corpus: &'a Corpus, depth: usize, n: usize) -> Self {
        Self {
            corpus,
            depth,
            cache: vec![None; n],
        }
    }

    fn get(&mut self, idx: usize, query: &str) -> Result<&[String], CorpusError> {
        if self.cache[idx].is_none() {
            let docs = match self.corpus.retrieve(query, self.depth) {
                Ok(r) => r.hits.into_iter().map(|h| h.doc_id).collect(),
                Err(CorpusError::EmptyQuery(_)) => Vec::new(),
                Err(e) => return Err(e),
            };
            self.cache[idx] = Some(docs);
        }
        Ok(self.cache[idx].as_deref().unwrap_or_default())
    }

    fn novelty(&mut self, idx: usize, query: &str, seen: &BTreeSet<String>) -> Result<f64, CorpusError> {
        let docs = self.get(idx, query)?;
        Ok(novelty(docs.iter().map(String::as_str), seen))
    }
}

fn prepare_pool(queries: &[String], warnings: &mut Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut pool = Vec::with_capacity(queries.len());
    let (mut blank, mut dups) = (0, 0);
    for q in queries {
        let q = q.trim();
        if q.is_empty() {
            blank += 1;
        } else if !seen.insert(q.to_string()) {
            dups += 1;
        } else {
            pool.push(q.to_string());
        }
    }
    if blank > 0 {
        warnings.push(format!("dropped {blank} blank candidate queries"));
    }
    if dups > 0 {
        warnings.push(format!("dropped {dups} duplicate candidate queries"));
    }
    pool
}

/// Runs the configured strategy over the candidate pool.
pub fn select_seeds(
    queries: &[String],
    corpus: &Corpus,
    config: &SeedingConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<SeedSelection, SeedingError> {
    if let Some((field, msg)) = config.problems().into_iter().next() {
        return Err(SeedingError::InvalidConfig(format!("{field}: {msg}")));
    }
    let mut warnings = Vec::new();
    let pool = prepare_pool(queries, &mut warnings);
    if pool.is_empty() {
        return Err(SeedingError::EmptyQueryPool);
    }
    let mut budget = config.budget;
    if budget > pool.len() {
        warnings.push(format!(
            "budget {budget} exceeds the {} available queries; selecting all",
            pool.len()
        ));
        budget = pool.len();
    }
    let embeddings = provider.embed(&pool)?;
    let mut assignment = cluster_queries(&embeddings, config.clusters, config.rng_seed);
    let mut footprints = Footprints::new(corpus, config.seed_retrieval_depth, pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let mut state = SeedingState::default();
    let order: Vec<usize> = match config.strategy {
        Strategy::CorpusAware => {
            corpus_aware(&pool, &embeddings, &mut assignment, config, budget, &mut footprints, &mut state, &mut warnings)?;
            state.selected.clone()
        }
        Strategy::Random => index::sample(&mut rng, pool.len(), budget).into_vec(),
        Strategy::Stratified => stratified(&assignment, budget, &mut rng),
        Strategy::Dpp => {
            let labels: Vec<&str> = pool.iter().map(String::as_str).collect();
            dpp::greedy_map(&embeddings, &labels, budget).order
        }
    };

    // Footprints and novelty in selection order; recomputed for every strategy
    // so the records are comparable.
    let mut seen = BTreeSet::new();
    let mut seeds = Vec::with_capacity(order.len());
    let mut coverage = vec![0; assignment.k()];
    for (rank, &idx) in order.iter().enumerate() {
        let docs = footprints.get(idx, &pool[idx])?.to_vec();
        let nov = novelty(docs.iter().map(String::as_str), &seen);
        seen.extend(docs.iter().cloned());
        let cluster_id = assignment.labels[idx];
        coverage[cluster_id] += 1;
        seeds.push(SeedRecord {
            seed_id: seed_id_for(&pool[idx]),
            query: pool[idx].clone(),
            cluster_id,
            novelty: nov,
            retrieved_doc_ids: docs,
            strategy: config.strategy.as_str().to_string(),
            rank,
        });
    }
    assignment.coverage = coverage;
    state.selected = order;
    state.seen_docs = seen;
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(SeedSelection {
        seeds,
        queries: pool,
        embeddings,
        assignment,
        state,
        warnings,
    })
}

#[allow(clippy::too_many_arguments)]
fn corpus_aware(
    pool: &[String],
    embeddings: &[EmbeddingVector],
    assignment: &mut ClusterAssignment,
    config: &SeedingConfig,
    budget: usize,
    footprints: &mut Footprints<'_>,
    state: &mut SeedingState,
    warnings: &mut Vec<String>,
) -> Result<(), SeedingError> {
    let k = assignment.k();
    state.remaining = (0..k).map(|c| assignment.members(c).collect()).collect();
    let mut active: Vec<bool> = state.remaining.iter().map(|r| !r.is_empty()).collect();
    let mut below_tau = vec![false; pool.len()];
    let mut coverage = vec![0usize; k];

    while state.selected.len() < budget {
        let Some(target) = (0..k)
            .filter(|&c| active[c])
            .min_by_key(|&c| (coverage[c], c))
        else {
            warnings.push(format!(
                "all clusters exhausted after {} of {budget} seeds",
                state.selected.len()
            ));
            break;
        };
        if state.remaining[target].is_empty() {
            active[target] = false;
            continue;
        }
        let mut scored = Vec::with_capacity(state.remaining[target].len());
        for &q in &state.remaining[target] {
            scored.push((q, footprints.novelty(q, &pool[q], &state.seen_docs)?));
        }
        // Queries that fail the threshold once stay out of the filtered set;
        // they remain available to the max-novelty fallback.
        let mut passing = Vec::new();
        for &(q, nov) in &scored {
            if !below_tau[q] && nov > config.tau {
                passing.push((q, nov));
            } else {
                below_tau[q] = true;
            }
        }
        if passing.is_empty() {
            let fallback = scored
                .iter()
                .copied()
                .reduce(|best, cur| {
                    if cur.1 > best.1 || (cur.1 == best.1 && pool[cur.0] < pool[best.0]) {
                        cur
                    } else {
                        best
                    }
                })
                .expect("non-empty cluster");
            passing.push(fallback);
        }
        let candidates: Vec<MmrCandidate<'_>> = passing
            .iter()
            .map(|&(q, nov)| MmrCandidate {
                query: &pool[q],
                embedding: &embeddings[q],
                novelty: nov,
            })
            .collect();
        let selected_embs: Vec<&EmbeddingVector> =
            state.selected.iter().map(|&i| &embeddings[i]).collect();
        let pick = passing[mmr_next(&candidates, &selected_embs, config.lambda)?].0;

        state.selected.push(pick);
        let docs = footprints.get(pick, &pool[pick])?;
        state.seen_docs.extend(docs.iter().cloned());
        coverage[target] += 1;
        state.remaining[target].retain(|&q| q != pick);
    }
    assignment.coverage = coverage;
    Ok(())
}

fn stratified(assignment: &ClusterAssignment, budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pools: Vec<Vec<usize>> = (0..assignment.k()).map(|c| assignment.members(c).collect()).collect();
    let mut out = Vec::with_capacity(budget);
    while out.len() < budget && pools.iter().any(|p| !p.is_empty()) {
        for pool in pools.iter_mut() {
            if out.len() == budget {
                break;
            }
            if pool.is_empty() {
                continue;
            }
            let i = rng.random_range(0..pool.len());
            out.push(pool.remove(i));
        }
    }
    out
}
