use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use agentsim_core::dataset::{export_dataset, ExportSummary, SHARD_SIZE, SUPERVISED_DIR, TRACES_DIR, TRAJECTORIES_DIR};
use agentsim_core::seeding::read_seeds;
use agentsim_core::simulation::engine::trace_id_for;
use agentsim_core::simulation::{
    FixedClock, ModelBackend, Outcome, RunOutput, SimulationConfig, Simulator, StepStatus, Trace,
};
use agentsim_core::validation::{apply_resolution, ReviewQueue};
use agentsim_core::Corpus;
use serde::{Deserialize, Serialize};

use crate::config::{prepare, Diagnostic, Overrides, RunConfig};
use crate::{CliError, OutputTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// One line of `manifest.jsonl`; the last line for a trace id wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub trace_id: String,
    pub seed_id: String,
    pub exploration: usize,
    pub status: RunStatus,
    pub outcome: Outcome,
    pub steps: usize,
    pub flagged: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Latest entry per trace id. A torn final line (interrupted append) is ignored.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, ManifestEntry>, CliError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(CliError::io(format!("reading {}", path.display()), e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = BTreeMap::new();
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ManifestEntry>(line) {
            Ok(entry) => {
                out.insert(entry.trace_id.clone(), entry);
            }
            Err(_) if !complete && n + 1 == lines.len() => {}
            Err(e) => {
                return Err(CliError::MalformedTree(format!("{} line {}: {e}", path.display(), n + 1)));
            }
        }
    }
    Ok(out)
}

fn run_path(tree: &OutputTree, trace_id: &str) -> PathBuf {
    tree.runs().join(format!("{trace_id}.json"))
}

fn read_run(tree: &OutputTree, trace_id: &str) -> Result<Trace, CliError> {
    let path = run_path(tree, trace_id);
    let bytes = std::fs::read(&path).map_err(|e| CliError::MalformedTree(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::MalformedTree(format!("{}: {e}", path.display())))
}

/// Every recorded trace (completed and failed), ordered by trace id.
pub fn load_runs(tree: &OutputTree) -> Result<Vec<(ManifestEntry, Trace)>, CliError> {
    if !tree.manifest().is_file() {
        return Err(CliError::MalformedTree(format!("{} not found", tree.manifest().display())));
    }
    read_manifest(&tree.manifest())?
        .into_values()
        .map(|entry| {
            let trace = read_run(tree, &entry.trace_id)?;
            Ok((entry, trace))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ExportReport {
    pub resolutions_applied: usize,
    /// Traces left out because a flagged step is still undecided.
    pub held_for_review: usize,
    pub dataset: ExportSummary,
}

impl fmt::Display for ExportReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.dataset;
        writeln!(
            f,
            "exported {} traces ({} steps), {} trajectories, {} supervised pairs; {} discarded",
            d.traces, d.trace_steps, d.trajectories, d.supervised_pairs, d.discarded
        )?;
        writeln!(
            f,
            "review: {} decisions applied, {} traces held for pending review",
            self.resolutions_applied, self.held_for_review
        )
    }
}

/// Applies decided reviews to the recorded traces and rewrites the three
/// dataset directories from scratch.
pub fn export_tree(tree: &OutputTree, corpus: &Corpus) -> Result<ExportReport, CliError> {
    let mut traces: Vec<Trace> = load_runs(tree)?.into_iter().map(|(_, t)| t).collect();
    let queue = ReviewQueue::open(tree.review())?;
    let mut resolutions_applied = 0;
    let index: BTreeMap<String, usize> = traces.iter().enumerate().map(|(i, t)| (t.trace_id.clone(), i)).collect();
    for item in queue.items() {
        if let Some(&i) = index.get(&item.trace_id) {
            if apply_resolution(&mut traces[i], item)? {
                resolutions_applied += 1;
            }
        }
    }
    let (held, finalized): (Vec<Trace>, Vec<Trace>) = traces.into_iter().partition(Trace::has_pending_review);
    for dir in [TRACES_DIR, TRAJECTORIES_DIR, SUPERVISED_DIR] {
        let path = tree.root.join(dir);
        if path.exists() {
            std::fs::remove_dir_all(&path).map_err(|e| CliError::io(format!("clearing {}", path.display()), e))?;
        }
    }
    let dataset = export_dataset(&finalized, corpus, &tree.root, SHARD_SIZE)?;
    Ok(ExportReport {
        resolutions_applied,
        held_for_review: held.len(),
        dataset,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub jobs: usize,
    /// Already completed in the manifest.
    pub skipped: usize,
    pub executed: usize,
    pub completed: usize,
    pub failed: Vec<ManifestEntry>,
    /// Review items created by this invocation.
    pub flagged_items: usize,
    pub auto_reretrieved_steps: usize,
    /// Completed traces in the manifest after this invocation.
    pub completed_total: usize,
    pub export: ExportReport,
    #[serde(skip)]
    pub config_warnings: Vec<Diagnostic>,
}

impl SimulateSummary {
    /// 0 when at least one trajectory has completed, else 1.
    pub fn exit_code(&self) -> i32 {
        if self.completed_total > 0 {
            0
        } else {
            1
        }
    }
}

impl fmt::Display for SimulateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.config_warnings {
            writeln!(f, "{d}")?;
        }
        writeln!(
            f,
            "{} jobs: {} executed ({} completed, {} failed), {} skipped as already completed",
            self.jobs,
            self.executed,
            self.completed,
            self.failed.len(),
            self.skipped
        )?;
        writeln!(
            f,
            "{} steps flagged for review, {} auto re-retrieval steps",
            self.flagged_items, self.auto_reretrieved_steps
        )?;
        for e in &self.failed {
            writeln!(f, "failed {}: {}", e.trace_id, e.error.as_deref().unwrap_or("unknown error"))?;
        }
        write!(f, "{}", self.export)
    }
}

#[derive(Default)]
struct Tally {
    executed: usize,
    completed: usize,
    failed: Vec<ManifestEntry>,
    flagged_items: usize,
    auto_reretrieved: usize,
    errors: Vec<CliError>,
}

fn simulation_config(config: &RunConfig) -> SimulationConfig {
    let analyst: Arc<dyn ModelBackend> = Arc::from(config.backends.analyst.build());
    let critics = config
        .backends
        .critics
        .iter()
        .map(|c| Arc::from(c.build()) as Arc<dyn ModelBackend>)
        .collect();
    let sim = SimulationConfig::new(analyst, critics, config.simulation.clone());
    match config.fixed_clock_ms {
        Some(ms) => sim.with_clock(Arc::new(FixedClock(ms))),
        None => sim,
    }
}

struct Recorder<'a> {
    tree: &'a OutputTree,
    config: &'a RunConfig,
    queue: Mutex<ReviewQueue>,
    manifest: Mutex<std::fs::File>,
    tally: Mutex<Tally>,
}

impl Recorder<'_> {
    fn record(&self, out: RunOutput) -> Result<(), CliError> {
        let trace = &out.trace;
        let path = run_path(self.tree, &trace.trace_id);
        let body = serde_json::to_vec(trace).expect("traces serialize");
        std::fs::write(&path, body).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;

        let failed = trace.failure.is_some();
        let mut flagged = 0;
        if !failed {
            let mut queue = self.queue.lock().unwrap_or_else(|p| p.into_inner());
            for draft in out.review_drafts {
                queue.enqueue(draft, &self.config.validation)?;
                flagged += 1;
            }
        }
        let entry = ManifestEntry {
            trace_id: trace.trace_id.clone(),
            seed_id: trace.seed.seed_id.clone(),
            exploration: trace.exploration,
            status: if failed { RunStatus::Failed } else { RunStatus::Completed },
            outcome: trace.outcome,
            steps: trace.steps.len(),
            flagged,
            error: trace.failure.clone(),
        };
        let mut line = serde_json::to_vec(&entry).expect("manifest entries serialize");
        line.push(b'\n');
        {
            let mut file = self.manifest.lock().unwrap_or_else(|p| p.into_inner());
            file.write_all(&line)
                .and_then(|_| file.flush())
                .map_err(|e| CliError::io(format!("appending {}", self.tree.manifest().display()), e))?;
        }

        let mut tally = self.tally.lock().unwrap_or_else(|p| p.into_inner());
        tally.executed += 1;
        tally.flagged_items += flagged;
        tally.auto_reretrieved += trace
            .steps
            .iter()
            .filter(|s| s.status == StepStatus::AutoReretrieved)
            .count();
        if failed {
            tracing::warn!(trace = %entry.trace_id, error = ?entry.error, "trajectory failed");
            tally.failed.push(entry);
        } else {
            tally.completed += 1;
        }
        Ok(())
    }
}

/// Runs every seed not yet completed in the manifest, records the results and
/// re-exports the dataset. `seeds_path` defaults to `<out>/seeds.jsonl`.
pub fn cmd_simulate(
    config_path: &Path,
    overrides: &Overrides,
    seeds_path: Option<&Path>,
) -> Result<SimulateSummary, CliError> {
    let prepared = prepare(config_path, overrides)?;
    let config = &prepared.config;
    let tree = OutputTree::new(&config.out);
    let seeds_path = seeds_path.map(Path::to_path_buf).unwrap_or_else(|| tree.seeds());
    let seeds = read_seeds(&seeds_path).map_err(|e| CliError::InvalidSeeds(format!("{}: {e}", seeds_path.display())))?;

    let sim_config = simulation_config(config);
    let simulator = Simulator::new(&prepared.corpus, &sim_config)?;
    let jobs = simulator.jobs(&seeds);
    let manifest = read_manifest(&tree.manifest())?;
    let pending: Vec<_> = jobs
        .iter()
        .filter(|(seed, x)| {
            manifest
                .get(&trace_id_for(seed, *x))
                .is_none_or(|e| e.status != RunStatus::Completed)
        })
        .cloned()
        .collect();
    let skipped = jobs.len() - pending.len();

    for dir in [tree.runs(), tree.review()] {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    }
    let manifest_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(tree.manifest())
        .map_err(|e| CliError::io(format!("opening {}", tree.manifest().display()), e))?;
    let recorder = Recorder {
        tree: &tree,
        config,
        queue: Mutex::new(ReviewQueue::open(tree.review())?),
        manifest: Mutex::new(manifest_file),
        tally: Mutex::new(Tally::default()),
    };
    simulator.run_each(&pending, |out| {
        if let Err(e) = recorder.record(out) {
            recorder.tally.lock().unwrap_or_else(|p| p.into_inner()).errors.push(e);
        }
    });
    let mut tally = recorder.tally.into_inner().unwrap_or_else(|p| p.into_inner());
    if !tally.errors.is_empty() {
        return Err(tally.errors.swap_remove(0));
    }
    tally.failed.sort_by(|a, b| a.trace_id.cmp(&b.trace_id));

    let completed_total = read_manifest(&tree.manifest())?
        .values()
        .filter(|e| e.status == RunStatus::Completed)
        .count();
    let export = export_tree(&tree, &prepared.corpus)?;
    Ok(SimulateSummary {
        jobs: jobs.len(),
        skipped,
        executed: tally.executed,
        completed: tally.completed,
        failed: tally.failed,
        flagged_items: tally.flagged_items,
        auto_reretrieved_steps: tally.auto_reretrieved,
        completed_total,
        export,
        config_warnings: prepared.warnings,
    })
}

/// Re-applies review decisions and rewrites the dataset export.
pub fn cmd_export(config_path: &Path, overrides: &Overrides) -> Result<ExportReport, CliError> {
    let prepared = prepare(config_path, overrides)?;
    export_tree(&OutputTree::new(&prepared.config.out), &prepared.corpus)
}
