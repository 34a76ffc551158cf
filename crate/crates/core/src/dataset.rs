//! Dataset export: full traces, prompt-free trajectories and supervised pairs,
//! as sharded, schema-versioned JSONL (gzip for `.gz` paths).

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::jsonl::{self, JsonlError, JsonlWriter};
use crate::seeding::SeedRecord;
use crate::simulation::action::AgentAction;
use crate::simulation::trace::{project, Outcome, Role, StepStatus, Trace, TraceStep, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;
pub const SHARD_SIZE: usize = 10_000;
pub const TRACES_DIR: &str = "traces";
pub const TRAJECTORIES_DIR: &str = "trajectories";
pub const SUPERVISED_DIR: &str = "supervised";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("trace `{0}` still has flagged steps awaiting review")]
    PendingReviewItems(String),
    #[error("trace `{trace_id}` references unknown doc_id `{doc_id}`")]
    UnknownDocId { trace_id: String, doc_id: String },
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("malformed dataset: {0}")]
    Corrupt(String),
}

/// Trace-level fields, carried on the first line of each trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub seed: SeedRecord,
    pub exploration: usize,
    pub analyst_model: String,
    pub critic_models: Vec<String>,
    pub prompt_hashes: BTreeMap<String, String>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub step_count: usize,
}

/// One line of a traces file: a single step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub schema_version: u32,
    pub trace_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<TraceHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<TraceStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub schema_version: u32,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDocument {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairAnswer {
    Answer { text: String },
    Abstain { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedPair {
    pub schema_version: u32,
    pub question: String,
    pub documents: Vec<PairDocument>,
    pub answer: PairAnswer,
    pub reasoning_chain: Vec<String>,
    pub source_trace_id: String,
}

fn check_exportable(trace: &Trace) -> Result<(), DatasetError> {
    if trace.has_pending_review() {
        return Err(DatasetError::PendingReviewItems(trace.trace_id.clone()));
    }
    Ok(())
}

/// Traces that belong in an export: finalized, not discarded.
fn exportable(traces: &[Trace]) -> Result<Vec<&Trace>, DatasetError> {
    let kept: Vec<&Trace> = traces.iter().filter(|t| t.outcome != Outcome::Discarded).collect();
    for t in &kept {
        check_exportable(t)?;
    }
    Ok(kept)
}

pub fn trace_lines(trace: &Trace) -> Vec<TraceLine> {
    let header = TraceHeader {
        seed: trace.seed.clone(),
        exploration: trace.exploration,
        analyst_model: trace.analyst_model.clone(),
        critic_models: trace.critic_models.clone(),
        prompt_hashes: trace.prompt_hashes.clone(),
        outcome: trace.outcome,
        failure: trace.failure.clone(),
        step_count: trace.steps.len(),
    };
    if trace.steps.is_empty() {
        return vec![TraceLine {
            schema_version: SCHEMA_VERSION,
            trace_id: trace.trace_id.clone(),
            header: Some(header),
            step: None,
        }];
    }
    let mut header = Some(header);
    trace
        .steps
        .iter()
        .map(|s| TraceLine {
            schema_version: SCHEMA_VERSION,
            trace_id: trace.trace_id.clone(),
            header: header.take(),
            step: Some(s.clone()),
        })
        .collect()
}

/// Writes one step per line. Discarded traces are skipped; a trace with
/// unresolved flagged steps is an error. Returns the number of lines.
pub fn write_traces(traces: &[Trace], path: &Path) -> Result<usize, DatasetError> {
    let kept = exportable(traces)?;
    let mut w = JsonlWriter::create(path)?;
    let mut n = 0;
    for t in kept {
        for line in trace_lines(t) {
            w.write_record(&line)?;
            n += 1;
        }
    }
    w.finish()?;
    Ok(n)
}

fn check_schema(v: u32) -> Result<(), DatasetError> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(DatasetError::SchemaVersion(v))
    }
}

/// Groups trace lines (from any number of files) back into traces, in order
/// of first appearance.
pub fn assemble_traces(lines: Vec<TraceLine>) -> Result<Vec<Trace>, DatasetError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (Option<TraceHeader>, Vec<TraceStep>)> = BTreeMap::new();
    for line in lines {
        check_schema(line.schema_version)?;
        let entry = groups.entry(line.trace_id.clone()).or_insert_with(|| {
            order.push(line.trace_id.clone());
            (None, Vec::new())
        });
        if let Some(h) = line.header {
            entry.0 = Some(h);
        }
        if let Some(s) = line.step {
            entry.1.push(s);
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (header, mut steps) = groups.remove(&id).expect("grouped");
            let header = header.ok_or_else(|| DatasetError::Corrupt(format!("trace `{id}` has no header line")))?;
            steps.sort_by_key(|s| s.step_index);
            if steps.len() != header.step_count {
                return Err(DatasetError::Corrupt(format!(
                    "trace `{id}` has {} steps, header says {}",
                    steps.len(),
                    header.step_count
                )));
            }
            Ok(Trace {
                trace_id: id,
                seed: header.seed,
                exploration: header.exploration,
                analyst_model: header.analyst_model,
                critic_models: header.critic_models,
                prompt_hashes: header.prompt_hashes,
                steps,
                outcome: header.outcome,
                failure: header.failure,
            })
        })
        .collect()
}

pub fn read_traces(path: &Path) -> Result<Vec<Trace>, DatasetError> {
    assemble_traces(jsonl::read_all(path)?)
}

pub fn write_trajectories(trajectories: &[Trajectory], path: &Path) -> Result<usize, DatasetError> {
    let mut w = JsonlWriter::create(path)?;
    for t in trajectories {
        w.write_record(&TrajectoryLine {
            schema_version: SCHEMA_VERSION,
            trajectory: t.clone(),
        })?;
    }
    w.finish()?;
    Ok(trajectories.len())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, DatasetError> {
    jsonl::read_all::<TrajectoryLine>(path)?
        .into_iter()
        .map(|l| check_schema(l.schema_version).map(|_| l.trajectory))
        .collect()
}

fn resolve(corpus: &Corpus, trace_id: &str, doc_id: &str) -> Result<PairDocument, DatasetError> {
    corpus
        .document(doc_id)
        .map(|d| PairDocument {
            doc_id: d.doc_id.clone(),
            text: d.text.clone(),
        })
        .ok_or_else(|| DatasetError::UnknownDocId {
            trace_id: trace_id.to_string(),
            doc_id: doc_id.to_string(),
        })
}

fn live_steps(trace: &Trace) -> impl Iterator<Item = &TraceStep> {
    trace.steps.iter().filter(|s| s.executed && s.status != StepStatus::Discarded)
}

/// Analyst thoughts of cycles whose executed step was accepted, promoted or revised.
pub fn reasoning_chain(trace: &Trace) -> Vec<String> {
    let mut cycles = Vec::new();
    for s in live_steps(trace) {
        if s.role != Role::System
            && matches!(s.status, StepStatus::Accepted | StepStatus::Promoted | StepStatus::Revised)
            && !cycles.contains(&s.cycle_index)
        {
            cycles.push(s.cycle_index);
        }
    }
    cycles
        .into_iter()
        .filter_map(|c| {
            trace
                .steps
                .iter()
                .find(|s| s.role == Role::Analyst && s.cycle_index == c)
                .map(|s| s.thought.trim().to_string())
                .filter(|t| !t.is_empty())
        })
        .collect()
}

/// One pair per answered or abstained trace. Answers carry their cited
/// documents; abstentions carry every document retrieved along the way.
pub fn extract_supervised_pairs(traces: &[Trace], corpus: &Corpus) -> Result<Vec<SupervisedPair>, DatasetError> {
    let mut out = Vec::new();
    for trace in exportable(traces)? {
        let Some(last) = live_steps(trace).last() else { continue };
        let (answer, doc_ids): (PairAnswer, Vec<String>) = match (&trace.outcome, &last.action) {
            (Outcome::Answered, AgentAction::Synthesize { answer, cited_doc_ids }) => {
                (PairAnswer::Answer { text: answer.clone() }, cited_doc_ids.clone())
            }
            (Outcome::Abstained, AgentAction::Abstain { reason }) => {
                let mut seen = HashSet::new();
                let retrieved = live_steps(trace)
                    .flat_map(|s| s.retrieved_doc_ids())
                    .filter(|d| seen.insert(d.clone()))
                    .collect();
                (PairAnswer::Abstain { reason: reason.clone() }, retrieved)
            }
            _ => continue,
        };
        let documents = doc_ids
            .iter()
            .map(|d| resolve(corpus, &trace.trace_id, d))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(SupervisedPair {
            schema_version: SCHEMA_VERSION,
            question: trace.seed.query.clone(),
            documents,
            answer,
            reasoning_chain: reasoning_chain(trace),
            source_trace_id: trace.trace_id.clone(),
        });
    }
    Ok(out)
}

pub fn write_supervised_pairs(pairs: &[SupervisedPair], path: &Path) -> Result<usize, DatasetError> {
    Ok(jsonl::write_all(path, pairs)?)
}

pub fn read_supervised_pairs(path: &Path) -> Result<Vec<SupervisedPair>, DatasetError> {
    let pairs: Vec<SupervisedPair> = jsonl::read_all(path)?;
    for p in &pairs {
        check_schema(p.schema_version)?;
    }
    Ok(pairs)
}

pub fn shard_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("part-{index:05}.jsonl.gz"))
}

/// Writes `records` into `dir/part-NNNNN.jsonl.gz` files of at most
/// `shard_size` records. Groups are never split across shards.
fn write_sharded<T: Serialize>(dir: &Path, groups: Vec<Vec<T>>, shard_size: usize) -> Result<Vec<PathBuf>, DatasetError> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut writer: Option<JsonlWriter> = None;
    let mut in_shard = 0;
    for group in groups {
        if writer.is_some() && in_shard + group.len() > shard_size {
            writer.take().expect("open shard").finish()?;
        }
        if writer.is_none() {
            let path = shard_path(dir, files.len());
            writer = Some(JsonlWriter::create(&path)?);
            files.push(path);
            in_shard = 0;
        }
        let w = writer.as_mut().expect("open shard");
        for r in &group {
            w.write_record(r)?;
        }
        in_shard += group.len();
    }
    match writer {
        Some(w) => w.finish()?,
        None => {
            let path = shard_path(dir, 0);
            JsonlWriter::create(&path)?.finish()?;
            files.push(path);
        }
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExportSummary {
    pub traces: usize,
    pub trace_steps: usize,
    pub trajectories: usize,
    pub supervised_pairs: usize,
    pub discarded: usize,
    pub files: Vec<PathBuf>,
}

/// Writes `traces/`, `trajectories/` and `supervised/` under `out_dir`.
pub fn export_dataset(traces: &[Trace], corpus: &Corpus, out_dir: &Path, shard_size: usize) -> Result<ExportSummary, DatasetError> {
    let kept = exportable(traces)?;
    let shard_size = shard_size.max(1);
    let mut summary = ExportSummary {
        traces: kept.len(),
        discarded: traces.len() - kept.len(),
        ..ExportSummary::default()
    };
    let trace_groups: Vec<Vec<TraceLine>> = kept.iter().map(|t| trace_lines(t)).collect();
    summary.trace_steps = trace_groups.iter().map(Vec::len).sum();
    summary.files.extend(write_sharded(&out_dir.join(TRACES_DIR), trace_groups, shard_size)?);

    let trajectories: Vec<Vec<TrajectoryLine>> = kept
        .iter()
        .map(|t| {
            vec![TrajectoryLine {
                schema_version: SCHEMA_VERSION,
                trajectory: project(t),
            }]
        })
        .collect();
    summary.trajectories = trajectories.len();
    summary.files.extend(write_sharded(&out_dir.join(TRAJECTORIES_DIR), trajectories, shard_size)?);

    let pairs = extract_supervised_pairs(traces, corpus)?;
    summary.supervised_pairs = pairs.len();
    let pairs: Vec<Vec<SupervisedPair>> = pairs.into_iter().map(|p| vec![p]).collect();
    summary.files.extend(write_sharded(&out_dir.join(SUPERVISED_DIR), pairs, shard_size)?);
    Ok(summary)
}

fn shards(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".jsonl.gz") || n.ends_with(".jsonl")))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every shard of an exported `traces/` directory.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<Trace>, DatasetError> {
    let mut lines = Vec::new();
    for f in shards(dir)? {
        lines.extend(jsonl::read_all::<TraceLine>(&f)?);
    }
    assemble_traces(lines)
}

pub fn read_trajectory_dir(dir: &Path) -> Result<Vec<Trajectory>, DatasetError> {
    let mut out = Vec::new();
    for f in shards(dir)? {
        out.extend(read_trajectories(&f)?);
    }
    Ok(out)
}

pub fn read_supervised_dir(dir: &Path) -> Result<Vec<SupervisedPair>, DatasetError> {
    let mut out = Vec::new();
    for f in shards(dir)? {
        out.extend(read_supervised_pairs(&f)?);
    }
    Ok(out)
}
