use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use agentsim_core::dataset::{read_supervised_dir, read_trace_dir, read_trajectory_dir, SUPERVISED_DIR, TRACES_DIR, TRAJECTORIES_DIR};
use agentsim_core::metrics::{
    behavior_metrics, chi_squared, classify_reformulation, default_meta_terms, reformulation_pairs, seeding_metrics,
    significance_tests, BehaviorReport, ChiSquaredTest, MetricsError, PairwiseTest, Reformulation,
    SeedingMetricsReport,
};
use agentsim_core::seeding::read_seeds;
use agentsim_core::simulation::{project, Outcome, Trace, Trajectory};
use agentsim_core::validation::{summarize_grounding, verify_grounding, GroundingSummary, QueueStats, ReviewQueue};
use agentsim_core::{Corpus, Stopwords};
use serde::Serialize;

use crate::config::{build_provider, prepare, Overrides};
use crate::seed::ClusterFile;
use crate::simulate::{load_runs, RunStatus};
use crate::{CliError, OutputTree};

const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetCounts {
    pub traces: usize,
    pub trajectories: usize,
    pub supervised_pairs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SignificanceRow {
    pub metric: String,
    #[serde(flatten)]
    pub test: PairwiseTest,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub out_dir: PathBuf,
    pub completed_traces: usize,
    pub failed_traces: usize,
    pub outcomes: BTreeMap<&'static str, usize>,
    pub behavior: Option<BehaviorReport>,
    pub seeding: Option<SeedingMetricsReport>,
    pub grounding: GroundingSummary,
    pub review: QueueStats,
    pub dataset: Option<DatasetCounts>,
    /// Pairwise tests between this tree and each `--compare` tree.
    pub significance: Vec<SignificanceRow>,
    /// Reformulation-type distribution across the compared trees.
    pub reformulation_chi_squared: Option<ChiSquaredTest>,
    pub notes: Vec<String>,
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Answered => "answered",
        Outcome::Abstained => "abstained",
        Outcome::Discarded => "discarded",
    }
}

struct Group {
    label: String,
    trajectories: Vec<Trajectory>,
}

fn completed_traces(tree: &OutputTree) -> Result<(Vec<Trace>, usize), CliError> {
    let runs = load_runs(tree)?;
    let failed = runs.iter().filter(|(e, _)| e.status == RunStatus::Failed).count();
    let traces = runs
        .into_iter()
        .filter(|(e, _)| e.status == RunStatus::Completed)
        .map(|(_, t)| t)
        .collect();
    Ok((traces, failed))
}

fn dataset_counts(tree: &OutputTree) -> Result<Option<DatasetCounts>, CliError> {
    let dirs = [TRACES_DIR, TRAJECTORIES_DIR, SUPERVISED_DIR].map(|d| tree.root.join(d));
    if dirs.iter().all(|d| !d.exists()) {
        return Ok(None);
    }
    let malformed = |e: agentsim_core::dataset::DatasetError| CliError::MalformedTree(e.to_string());
    Ok(Some(DatasetCounts {
        traces: read_trace_dir(&dirs[0]).map_err(malformed)?.len(),
        trajectories: read_trajectory_dir(&dirs[1]).map_err(malformed)?.len(),
        supervised_pairs: read_supervised_dir(&dirs[2]).map_err(malformed)?.len(),
    }))
}

/// Grounding of every terminal answer or refusal.
fn grounding(traces: &[Trace], corpus: &Corpus, threshold: f64) -> Result<GroundingSummary, CliError> {
    let mut reports = Vec::new();
    for t in traces {
        if t.outcome == Outcome::Discarded {
            continue;
        }
        let terminal = t.steps.iter().rev().find(|s| s.executed && s.action.is_terminal());
        if let Some(step) = terminal {
            reports.push(verify_grounding(&step.action, corpus, corpus.stopwords())?);
        }
    }
    Ok(summarize_grounding(&reports, threshold))
}

fn seeding(tree: &OutputTree, corpus: &Corpus, prepared: &crate::config::Prepared) -> Result<Option<SeedingMetricsReport>, CliError> {
    if !tree.seeds().is_file() || !tree.clusters().is_file() {
        return Ok(None);
    }
    let seeds = read_seeds(&tree.seeds()).map_err(|e| CliError::MalformedTree(e.to_string()))?;
    let bytes = std::fs::read(tree.clusters()).map_err(|e| CliError::io(format!("reading {}", tree.clusters().display()), e))?;
    let clusters: ClusterFile =
        serde_json::from_slice(&bytes).map_err(|e| CliError::MalformedTree(format!("{}: {e}", tree.clusters().display())))?;
    let provider = build_provider(&prepared.config.embedding)?;
    match seeding_metrics(&seeds, &clusters.assignment, corpus, provider.as_ref()) {
        Ok(r) => Ok(Some(r)),
        Err(MetricsError::SingleSeed) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn per_trajectory(groups: &[Group], f: impl Fn(&Trajectory) -> f64) -> Vec<(String, Vec<f64>)> {
    groups
        .iter()
        .map(|g| (g.label.clone(), g.trajectories.iter().map(&f).collect()))
        .collect()
}

fn compare(groups: &[Group], notes: &mut Vec<String>) -> (Vec<SignificanceRow>, Option<ChiSquaredTest>) {
    let mut rows = Vec::new();
    if groups.len() < 2 {
        return (rows, None);
    }
    let samples = [
        (
            "unique_docs",
            per_trajectory(groups, |t| {
                t.tool_calls.iter().flat_map(|c| c.doc_ids.iter()).collect::<BTreeSet<_>>().len() as f64
            }),
        ),
        (
            "search_calls",
            per_trajectory(groups, |t| t.tool_calls.iter().filter(|c| c.tool == "search").count() as f64),
        ),
    ];
    for (metric, groups) in samples {
        match significance_tests(&groups, ALPHA) {
            Ok(tests) => rows.extend(tests.into_iter().map(|test| SignificanceRow {
                metric: metric.to_string(),
                test,
            })),
            Err(e) => notes.push(format!("{metric}: {e}")),
        }
    }
    let stopwords = Stopwords::english();
    let meta = default_meta_terms();
    let table: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let mut counts = vec![0.0; Reformulation::ALL.len()];
            for (a, b) in reformulation_pairs(&g.trajectories) {
                let kind = classify_reformulation(&a, &b, &stopwords, &meta);
                counts[Reformulation::ALL.iter().position(|k| *k == kind).expect("known kind")] += 1.0;
            }
            counts
        })
        .collect();
    let chi = match chi_squared(&table) {
        Ok(c) => Some(c),
        Err(e) => {
            notes.push(format!("reformulation chi-squared: {e}"));
            None
        }
    };
    (rows, chi)
}

/// Aggregates the metrics of an output tree. `compare` lists further output
/// trees whose trajectories are tested against this one.
pub fn cmd_metrics(
    config_path: &Path,
    overrides: &Overrides,
    compare_dirs: &[PathBuf],
    csv_path: Option<&Path>,
) -> Result<MetricsReport, CliError> {
    let prepared = prepare(config_path, overrides)?;
    let tree = OutputTree::new(&prepared.config.out);
    let corpus = &prepared.corpus;
    let (traces, failed) = completed_traces(&tree)?;
    let mut notes = Vec::new();

    let mut outcomes = BTreeMap::new();
    for t in &traces {
        *outcomes.entry(outcome_name(t.outcome)).or_insert(0) += 1;
    }
    let trajectories: Vec<Trajectory> = traces.iter().map(project).collect();
    let behavior = match behavior_metrics(&trajectories, &Stopwords::english(), &default_meta_terms()) {
        Ok(b) => Some(b),
        Err(MetricsError::EmptyInput(what)) => {
            notes.push(format!("no {what}; behavior metrics skipped"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let grounding = grounding(&traces, corpus, prepared.config.validation.grounding_threshold)?;
    let review = if tree.review().is_dir() {
        ReviewQueue::open(tree.review())?.stats()
    } else {
        QueueStats::default()
    };

    let mut groups = vec![Group {
        label: tree.root.display().to_string(),
        trajectories,
    }];
    for dir in compare_dirs {
        let other = OutputTree::new(dir);
        let (t, _) = completed_traces(&other)?;
        groups.push(Group {
            label: dir.display().to_string(),
            trajectories: t.iter().map(project).collect(),
        });
    }
    let (significance, reformulation_chi_squared) = compare(&groups, &mut notes);

    let report = MetricsReport {
        out_dir: tree.root.clone(),
        completed_traces: traces.len(),
        failed_traces: failed,
        outcomes,
        behavior,
        seeding: seeding(&tree, corpus, &prepared)?,
        grounding,
        review,
        dataset: dataset_counts(&tree)?,
        significance,
        reformulation_chi_squared,
        notes,
    };
    let body = serde_json::to_vec_pretty(&report).expect("report serializes");
    std::fs::write(tree.metrics(), body).map_err(|e| CliError::io(format!("writing {}", tree.metrics().display()), e))?;
    if let Some(path) = csv_path {
        write_csv(path, &report.significance)?;
    }
    Ok(report)
}

fn write_csv(path: &Path, rows: &[SignificanceRow]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::io(format!("writing {}", path.display()), std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["metric", "group_a", "group_b", "mann_whitney_u", "p", "cohens_d", "holm_reject"])
        .map_err(err)?;
    for r in rows {
        let t = &r.test;
        w.write_record([
            r.metric.clone(),
            t.group_a.clone(),
            t.group_b.clone(),
            t.mann_whitney_u.to_string(),
            t.p.to_string(),
            t.cohens_d.map(|d| d.to_string()).unwrap_or_default(),
            t.holm_reject.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}
