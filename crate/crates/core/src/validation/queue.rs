//! Persistent review queue for divergence-flagged steps.
//!
//! State lives in two append-only files under the queue directory:
//! `items.jsonl` (one [`ReviewItem`] per flagged step, as enqueued) and
//! `decisions.jsonl` (one [`DecisionRecord`] per accepted decision). Replaying
//! the decision log over the items reconstructs the queue exactly;
//! `snapshot.json` caches a replayed state and the byte offsets it covers.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::hash::Hasher;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{ValidationConfig, ValidationError};
use crate::simulation::action::AgentAction;
use crate::simulation::judge::Candidate;
use crate::simulation::trace::{Outcome, StepStatus, Trace};

pub const ITEMS_FILE: &str = "items.jsonl";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Decided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Promote,
    Revise,
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewerRole {
    #[default]
    Annotator,
    Adjudicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub reviewer_id: String,
    #[serde(default)]
    pub role: ReviewerRole,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_candidate_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_action: Option<AgentAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    #[serde(default)]
    pub decided_at: u64,
}

impl ReviewDecision {
    pub fn promote(reviewer: &str, index: usize) -> Self {
        Self::new(reviewer, Verdict::Promote, Some(index), None)
    }

    pub fn revise(reviewer: &str, action: AgentAction) -> Self {
        Self::new(reviewer, Verdict::Revise, None, Some(action))
    }

    pub fn discard(reviewer: &str) -> Self {
        Self::new(reviewer, Verdict::Discard, None, None)
    }

    fn new(reviewer: &str, verdict: Verdict, idx: Option<usize>, action: Option<AgentAction>) -> Self {
        Self {
            reviewer_id: reviewer.to_string(),
            role: ReviewerRole::Annotator,
            verdict,
            chosen_candidate_index: idx,
            revised_action: action,
            notes: None,
            decided_at: 0,
        }
    }

    /// Same verdict, and the same candidate for promotions.
    pub fn agrees_with(&self, other: &Self) -> bool {
        self.verdict == other.verdict
            && (self.verdict != Verdict::Promote || self.chosen_candidate_index == other.chosen_candidate_index)
    }
}

/// What the simulator hands over for a flagged step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDraft {
    pub trace_id: String,
    pub step_index: usize,
    pub seed_query: String,
    pub context_excerpt: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub divergence_score: f64,
}

impl ReviewDraft {
    pub fn item_id(&self) -> String {
        format!("{}:{}", self.trace_id, self.step_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub trace_id: String,
    pub step_index: usize,
    pub seed_query: String,
    pub context_excerpt: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub divergence_score: f64,
    pub status: ReviewStatus,
    pub double_annotated: bool,
    #[serde(default)]
    pub decisions: Vec<ReviewDecision>,
    #[serde(default)]
    pub needs_adjudication: bool,
    #[serde(default)]
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<ReviewDecision>,
}

impl ReviewItem {
    pub fn required_decisions(&self) -> usize {
        if self.double_annotated {
            2
        } else {
            1
        }
    }
}

/// One line of `decisions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_version: Option<u64>,
    pub decision: ReviewDecision,
}

/// Deterministic double-annotation band: `fnv1a(item_id) mod 100 < 100 * rate`.
pub fn is_double_annotated(item_id: &str, rate: f64) -> bool {
    let mut h = FnvHasher::default();
    h.write(item_id.as_bytes());
    h.finish() % 100 < (rate * 100.0).round() as u64
}

fn check_decision(item: &ReviewItem, d: &ReviewDecision) -> Result<(), ValidationError> {
    if d.reviewer_id.trim().is_empty() {
        return Err(ValidationError::InvalidDecision("reviewer_id is empty".into()));
    }
    match d.verdict {
        Verdict::Promote => match d.chosen_candidate_index {
            Some(i) if i < item.candidates.len() => Ok(()),
            Some(i) => Err(ValidationError::InvalidDecision(format!(
                "candidate index {i} out of range (item has {})",
                item.candidates.len()
            ))),
            None => Err(ValidationError::InvalidDecision("promote requires chosen_candidate_index".into())),
        },
        Verdict::Revise => match &d.revised_action {
            Some(a) => a.validate().map_err(ValidationError::InvalidDecision),
            None => Err(ValidationError::InvalidDecision("revise requires revised_action".into())),
        },
        Verdict::Discard => Ok(()),
    }
}

/// Applies one decision to an item. Single-annotation items resolve on the
/// first decision; double-annotated items need two, and a disagreement sets
/// `needs_adjudication` until a third (adjudicator) decision settles it.
pub fn apply_review_decision(item: &mut ReviewItem, mut decision: ReviewDecision) -> Result<(), ValidationError> {
    if item.status == ReviewStatus::Decided || item.decisions.iter().any(|d| d.reviewer_id == decision.reviewer_id) {
        return Err(ValidationError::AlreadyDecided {
            item_id: item.item_id.clone(),
            reviewer_id: decision.reviewer_id,
        });
    }
    check_decision(item, &decision)?;
    if item.needs_adjudication {
        decision.role = ReviewerRole::Adjudicator;
    }
    item.decisions.push(decision);
    item.version += 1;

    let n = item.decisions.len();
    if !item.double_annotated {
        item.resolution = Some(item.decisions[0].clone());
    } else if n == 2 {
        if item.decisions[0].agrees_with(&item.decisions[1]) {
            item.resolution = Some(item.decisions[0].clone());
        } else {
            item.needs_adjudication = true;
        }
    } else if n >= 3 {
        // The adjudicator either sides with one annotator (the majority) or
        // all three differ; either way their decision stands.
        item.resolution = Some(item.decisions[n - 1].clone());
        item.needs_adjudication = false;
    }
    if item.resolution.is_some() {
        item.status = ReviewStatus::Decided;
    }
    Ok(())
}

/// Fraction of double-annotated items whose first two decisions agree.
pub fn agreement_rate<'a>(items: impl IntoIterator<Item = &'a ReviewItem>) -> Result<f64, ValidationError> {
    let (mut total, mut agree) = (0usize, 0usize);
    for item in items {
        if item.double_annotated && item.decisions.len() >= 2 {
            total += 1;
            if item.decisions[0].agrees_with(&item.decisions[1]) {
                agree += 1;
            }
        }
    }
    if total == 0 {
        return Err(ValidationError::NoDoubleAnnotatedItems);
    }
    Ok(agree as f64 / total as f64)
}

/// Installs a decided item's resolution into its trace. Returns false when
/// the item is not decided or does not belong to the trace.
pub fn apply_resolution(trace: &mut Trace, item: &ReviewItem) -> Result<bool, ValidationError> {
    let Some(resolution) = item.resolution.as_ref() else {
        return Ok(false);
    };
    if item.trace_id != trace.trace_id {
        return Ok(false);
    }
    let step = trace
        .steps
        .iter_mut()
        .find(|s| s.step_index == item.step_index)
        .ok_or_else(|| ValidationError::Corrupt(format!("{} has no step {}", trace.trace_id, item.step_index)))?;
    match resolution.verdict {
        Verdict::Promote => {
            let idx = resolution.chosen_candidate_index.unwrap_or(0);
            let cand = item
                .candidates
                .get(idx)
                .ok_or_else(|| ValidationError::Corrupt(format!("candidate {idx} missing")))?;
            step.action = cand.action.clone();
            step.status = StepStatus::Promoted;
        }
        Verdict::Revise => {
            step.action = resolution
                .revised_action
                .clone()
                .ok_or_else(|| ValidationError::Corrupt("revise without action".into()))?;
            step.status = StepStatus::Revised;
        }
        Verdict::Discard => {
            step.status = StepStatus::Discarded;
            trace.outcome = Outcome::Discarded;
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueueStats {
    pub total: usize,
    pub pending: usize,
    pub decided: usize,
    pub needs_adjudication: usize,
    pub promote: usize,
    pub revise: usize,
    pub discard: usize,
    pub agreement_rate: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    items_offset: u64,
    decisions_offset: u64,
    decisions_applied: usize,
    items: Vec<ReviewItem>,
}

fn persist_err(path: &Path, e: impl std::fmt::Display) -> ValidationError {
    ValidationError::Persistence(format!("{}: {e}", path.display()))
}

/// Reads complete lines appended after `offset`; returns them and the new offset.
fn read_tail(path: &Path, offset: u64) -> Result<(Vec<String>, u64), ValidationError> {
    let mut f = File::open(path).map_err(|e| persist_err(path, e))?;
    f.seek(SeekFrom::Start(offset)).map_err(|e| persist_err(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| persist_err(path, e))?;
    let Some(last_nl) = buf.iter().rposition(|&b| b == b'\n') else {
        return Ok((Vec::new(), offset));
    };
    let text = String::from_utf8(buf[..=last_nl].to_vec())
        .map_err(|e| ValidationError::Corrupt(format!("{}: {e}", path.display())))?;
    let lines = text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect();
    Ok((lines, offset + last_nl as u64 + 1))
}

fn append_line<T: Serialize>(path: &Path, record: &T) -> Result<(), ValidationError> {
    let mut line = serde_json::to_vec(record).map_err(|e| persist_err(path, e))?;
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| persist_err(path, e))?;
    // One write per record keeps appends whole.
    f.write_all(&line).map_err(|e| persist_err(path, e))?;
    f.flush().map_err(|e| persist_err(path, e))
}

fn file_len(path: &Path) -> u64 {
    fs::metadata(path).map(|m| m.len()).unwrap_or(0)
}

/// Single-writer review queue backed by the append-only files.
#[derive(Debug)]
pub struct ReviewQueue {
    dir: PathBuf,
    items: BTreeMap<String, ReviewItem>,
    items_offset: u64,
    decisions_offset: u64,
    decisions_applied: usize,
}

impl ReviewQueue {
    /// Opens (creating if needed) the queue in `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ValidationError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| persist_err(&dir, e))?;
        for f in [ITEMS_FILE, DECISIONS_FILE] {
            let p = dir.join(f);
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(|e| persist_err(&p, e))?;
        }
        let mut q = Self {
            dir,
            items: BTreeMap::new(),
            items_offset: 0,
            decisions_offset: 0,
            decisions_applied: 0,
        };
        q.load_snapshot();
        q.refresh()?;
        Ok(q)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn load_snapshot(&mut self) {
        let path = self.dir.join(SNAPSHOT_FILE);
        let Ok(text) = fs::read_to_string(&path) else { return };
        let Ok(snap) = serde_json::from_str::<Snapshot>(&text) else {
            tracing::warn!("ignoring unreadable snapshot {}", path.display());
            return;
        };
        if snap.items_offset <= file_len(&self.dir.join(ITEMS_FILE))
            && snap.decisions_offset <= file_len(&self.dir.join(DECISIONS_FILE))
        {
            self.items = snap.items.into_iter().map(|i| (i.item_id.clone(), i)).collect();
            self.items_offset = snap.items_offset;
            self.decisions_offset = snap.decisions_offset;
            self.decisions_applied = snap.decisions_applied;
        }
    }

    fn reset(&mut self) {
        self.items.clear();
        self.items_offset = 0;
        self.decisions_offset = 0;
        self.decisions_applied = 0;
    }

    /// Picks up lines appended to the queue files by other writers.
    pub fn refresh(&mut self) -> Result<(), ValidationError> {
        let items_path = self.dir.join(ITEMS_FILE);
        let decisions_path = self.dir.join(DECISIONS_FILE);
        if file_len(&items_path) < self.items_offset || file_len(&decisions_path) < self.decisions_offset {
            self.reset();
        }
        let (lines, off) = read_tail(&items_path, self.items_offset)?;
        for line in lines {
            let item: ReviewItem = serde_json::from_str(&line)
                .map_err(|e| ValidationError::Corrupt(format!("{}: {e}", items_path.display())))?;
            self.items.entry(item.item_id.clone()).or_insert(item);
        }
        self.items_offset = off;

        let (lines, off) = read_tail(&decisions_path, self.decisions_offset)?;
        for line in lines {
            let rec: DecisionRecord = serde_json::from_str(&line)
                .map_err(|e| ValidationError::Corrupt(format!("{}: {e}", decisions_path.display())))?;
            let item = self
                .items
                .get_mut(&rec.item_id)
                .ok_or_else(|| ValidationError::Corrupt(format!("decision for unknown item `{}`", rec.item_id)))?;
            apply_review_decision(item, rec.decision)
                .map_err(|e| ValidationError::Corrupt(format!("replaying `{}`: {e}", rec.item_id)))?;
            self.decisions_applied += 1;
        }
        self.decisions_offset = off;
        Ok(())
    }

    /// Persists a flagged step as a pending item. Re-enqueuing an existing
    /// item id returns the stored item unchanged.
    pub fn enqueue(&mut self, draft: ReviewDraft, config: &ValidationConfig) -> Result<ReviewItem, ValidationError> {
        if draft.divergence_score.is_nan() || draft.divergence_score <= config.theta {
            return Err(ValidationError::Precondition(format!(
                "divergence score {} does not exceed theta {}",
                draft.divergence_score, config.theta
            )));
        }
        let distinct: std::collections::BTreeSet<String> =
            draft.candidates.iter().map(|c| c.action.canonical_key()).collect();
        if distinct.len() < 2 {
            return Err(ValidationError::Precondition("fewer than two distinct candidates".into()));
        }
        let item_id = draft.item_id();
        if let Some(existing) = self.items.get(&item_id) {
            return Ok(existing.clone());
        }
        let item = ReviewItem {
            double_annotated: is_double_annotated(&item_id, config.double_annotation_rate),
            item_id: item_id.clone(),
            trace_id: draft.trace_id,
            step_index: draft.step_index,
            seed_query: draft.seed_query,
            context_excerpt: draft.context_excerpt,
            candidates: draft.candidates,
            divergence_score: draft.divergence_score,
            status: ReviewStatus::Pending,
            decisions: Vec::new(),
            needs_adjudication: false,
            version: 0,
            resolution: None,
        };
        let path = self.dir.join(ITEMS_FILE);
        append_line(&path, &item)?;
        self.items_offset = file_len(&path);
        self.items.insert(item_id, item.clone());
        Ok(item)
    }

    /// Validates, applies and logs a decision. `expected_version` enables
    /// optimistic conflict detection.
    pub fn decide(
        &mut self,
        item_id: &str,
        decision: ReviewDecision,
        expected_version: Option<u64>,
    ) -> Result<ReviewItem, ValidationError> {
        self.refresh()?;
        let item = self
            .items
            .get(item_id)
            .ok_or_else(|| ValidationError::UnknownItem(item_id.to_string()))?;
        let mut updated = item.clone();
        if updated.status != ReviewStatus::Decided {
            if let Some(expected) = expected_version {
                if expected != updated.version {
                    return Err(ValidationError::StaleItem {
                        item_id: item_id.to_string(),
                        expected,
                        actual: updated.version,
                    });
                }
            }
        }
        apply_review_decision(&mut updated, decision.clone())?;
        let record = DecisionRecord {
            item_id: item_id.to_string(),
            expected_version,
            decision: updated.decisions.last().cloned().unwrap_or(decision),
        };
        let path = self.dir.join(DECISIONS_FILE);
        append_line(&path, &record)?;
        self.decisions_offset = file_len(&path);
        self.decisions_applied += 1;
        self.items.insert(item_id.to_string(), updated.clone());
        if self.decisions_applied.is_multiple_of(SNAPSHOT_EVERY) {
            self.write_snapshot()?;
        }
        Ok(updated)
    }

    pub fn write_snapshot(&self) -> Result<(), ValidationError> {
        let snap = Snapshot {
            items_offset: self.items_offset,
            decisions_offset: self.decisions_offset,
            decisions_applied: self.decisions_applied,
            items: self.items.values().cloned().collect(),
        };
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let bytes = serde_json::to_vec(&snap).map_err(|e| persist_err(&path, e))?;
        fs::write(&tmp, bytes).map_err(|e| persist_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| persist_err(&path, e))
    }

    pub fn get(&self, item_id: &str) -> Option<&ReviewItem> {
        self.items.get(item_id)
    }

    pub fn items(&self) -> impl Iterator<Item = &ReviewItem> {
        self.items.values()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items with the given status, highest divergence first (item id breaks ties).
    pub fn list(&self, status: Option<ReviewStatus>) -> Vec<&ReviewItem> {
        let mut v: Vec<&ReviewItem> = self
            .items
            .values()
            .filter(|i| status.is_none_or(|s| i.status == s))
            .collect();
        v.sort_by(|a, b| {
            b.divergence_score
                .total_cmp(&a.divergence_score)
                .then_with(|| a.item_id.cmp(&b.item_id))
        });
        v
    }

    pub fn stats(&self) -> QueueStats {
        let mut s = QueueStats {
            total: self.items.len(),
            ..QueueStats::default()
        };
        for item in self.items.values() {
            match item.status {
                ReviewStatus::Pending => s.pending += 1,
                ReviewStatus::Decided => s.decided += 1,
            }
            if item.needs_adjudication {
                s.needs_adjudication += 1;
            }
            match item.resolution.as_ref().map(|r| r.verdict) {
                Some(Verdict::Promote) => s.promote += 1,
                Some(Verdict::Revise) => s.revise += 1,
                Some(Verdict::Discard) => s.discard += 1,
                None => {}
            }
        }
        s.agreement_rate = agreement_rate(self.items.values()).ok();
        s
    }
}
