use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use agentsim_core::seeding::{select_seeds, write_seeds, ClusterAssignment, Strategy};
use serde::{Deserialize, Serialize};

use crate::config::{build_provider, prepare, Diagnostic, Overrides};
use crate::{CliError, OutputTree};

/// Contents of `clusters.json`: the deduplicated candidate pool and its clustering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterFile {
    pub strategy: Strategy,
    pub rng_seed: u64,
    pub queries: Vec<String>,
    pub assignment: ClusterAssignment,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub strategy: Strategy,
    pub seeds: usize,
    pub candidate_pool: usize,
    pub clusters: usize,
    /// Seeds per cluster id.
    pub per_cluster: BTreeMap<usize, usize>,
    pub mean_novelty: f64,
    pub seeds_path: PathBuf,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub config_warnings: Vec<Diagnostic>,
}

impl fmt::Display for SeedSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.config_warnings {
            writeln!(f, "{d}")?;
        }
        writeln!(
            f,
            "selected {} of {} candidate queries with {} into {}",
            self.seeds,
            self.candidate_pool,
            self.strategy,
            self.seeds_path.display()
        )?;
        writeln!(f, "mean novelty {:.4}", self.mean_novelty)?;
        let covered = self.per_cluster.values().filter(|&&n| n > 0).count();
        writeln!(f, "clusters covered {covered}/{}", self.clusters)?;
        for (c, n) in &self.per_cluster {
            writeln!(f, "  cluster {c:>3}: {n}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

pub fn cmd_seed_select(config_path: &Path, overrides: &Overrides) -> Result<SeedSummary, CliError> {
    let prepared = prepare(config_path, overrides)?;
    let config = &prepared.config;
    let provider = build_provider(&config.embedding)?;
    let selection = select_seeds(&prepared.queries, &prepared.corpus, &config.seeding, provider.as_ref())?;

    let tree = OutputTree::new(&config.out);
    std::fs::create_dir_all(&tree.root).map_err(|e| CliError::io(format!("creating {}", tree.root.display()), e))?;
    write_seeds(&tree.seeds(), &selection.seeds)
        .map_err(|e| CliError::io(format!("writing {}", tree.seeds().display()), e))?;
    let clusters = ClusterFile {
        strategy: config.seeding.strategy,
        rng_seed: config.rng_seed,
        queries: selection.queries.clone(),
        assignment: selection.assignment.clone(),
    };
    let body = serde_json::to_vec(&clusters).expect("cluster file serializes");
    std::fs::write(tree.clusters(), body).map_err(|e| CliError::io(format!("writing {}", tree.clusters().display()), e))?;

    let mut per_cluster: BTreeMap<usize, usize> = (0..selection.assignment.k()).map(|c| (c, 0)).collect();
    for s in &selection.seeds {
        *per_cluster.entry(s.cluster_id).or_default() += 1;
    }
    let mean_novelty = if selection.seeds.is_empty() {
        0.0
    } else {
        selection.seeds.iter().map(|s| s.novelty).sum::<f64>() / selection.seeds.len() as f64
    };
    Ok(SeedSummary {
        strategy: config.seeding.strategy,
        seeds: selection.seeds.len(),
        candidate_pool: selection.queries.len(),
        clusters: selection.assignment.k(),
        per_cluster,
        mean_novelty,
        seeds_path: tree.seeds(),
        warnings: selection.warnings,
        config_warnings: prepared.warnings,
    })
}
