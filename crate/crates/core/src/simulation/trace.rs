//! Trace and trajectory records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::action::AgentAction;
use super::backend::ChatMessage;
use super::judge::Candidate;
use crate::corpus::RetrievalResult;
use crate::seeding::SeedRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Analyst,
    Critic,
    Judge,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Accepted,
    Flagged,
    AutoReretrieved,
    Promoted,
    Revised,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    Retrieval { result: RetrievalResult },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub trace_id: String,
    pub step_index: usize,
    pub cycle_index: usize,
    pub role: Role,
    pub model_id: String,
    pub thought: String,
    pub action: AgentAction,
    /// Whether this step's action was carried out against the environment.
    pub executed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding_confidence: Option<f64>,
    pub status: StepStatus,
    /// Distinct competing actions of a flagged step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Vec<ChatMessage>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    pub timestamp_ms: u64,
}

impl TraceStep {
    pub fn retrieved_doc_ids(&self) -> Vec<String> {
        match &self.observation {
            Some(Observation::Retrieval { result }) => {
                result.hits.iter().map(|h| h.doc_id.clone()).collect()
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Answered,
    Abstained,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_id: String,
    pub seed: SeedRecord,
    pub exploration: usize,
    pub analyst_model: String,
    pub critic_models: Vec<String>,
    /// Prompt template name -> sha256 of its text.
    pub prompt_hashes: BTreeMap<String, String>,
    pub steps: Vec<TraceStep>,
    pub outcome: Outcome,
    /// Set when the run aborted on a backend error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Trace {
    /// Flagged steps still awaiting a review decision.
    pub fn pending_review_steps(&self) -> impl Iterator<Item = &TraceStep> {
        self.steps.iter().filter(|s| s.status == StepStatus::Flagged)
    }

    pub fn has_pending_review(&self) -> bool {
        self.outcome != Outcome::Discarded && self.pending_review_steps().next().is_some()
    }

    pub fn analyst_proposals(&self) -> usize {
        self.steps.iter().filter(|s| s.role == Role::Analyst).count()
    }

    pub fn cycles(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.role == Role::Analyst)
            .map(|s| s.cycle_index + 1)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub input: serde_json::Value,
    pub output: String,
    /// Documents returned (search) or referenced (other tools).
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinalAnswer {
    Answer { text: String, cited_doc_ids: Vec<String> },
    Abstain { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trace_id: String,
    pub seed: SeedRecord,
    pub tool_calls: Vec<ToolCall>,
    #[serde(rename = "final")]
    pub final_answer: Option<FinalAnswer>,
    pub outcome: Outcome,
}

fn tool_call(step: &TraceStep) -> Option<ToolCall> {
    let mut input = serde_json::to_value(&step.action).expect("actions serialize");
    if let Some(obj) = input.as_object_mut() {
        obj.remove("type");
    }
    let (output, doc_ids) = match &step.action {
        AgentAction::Abstain { .. } => return None,
        AgentAction::Search { .. } => {
            let ids = step.retrieved_doc_ids();
            (format!("{} hits: {}", ids.len(), ids.join(", ")), ids)
        }
        AgentAction::Rerank { doc_ids } => (format!("reordered {} documents", doc_ids.len()), doc_ids.clone()),
        AgentAction::Summarize { doc_ids, summary } => (summary.clone(), doc_ids.clone()),
        AgentAction::Synthesize { answer, cited_doc_ids } => (answer.clone(), cited_doc_ids.clone()),
    };
    Some(ToolCall {
        tool: step.action.action_type().as_str().to_string(),
        input,
        output,
        doc_ids,
    })
}

/// Prompt-free projection of a trace: the executed actions in order plus the
/// terminal answer or abstention.
pub fn project(trace: &Trace) -> Trajectory {
    let executed: Vec<&TraceStep> = trace
        .steps
        .iter()
        .filter(|s| s.executed && s.status != StepStatus::Discarded)
        .collect();
    let final_answer = executed.last().and_then(|s| match &s.action {
        AgentAction::Synthesize { answer, cited_doc_ids } => Some(FinalAnswer::Answer {
            text: answer.clone(),
            cited_doc_ids: cited_doc_ids.clone(),
        }),
        AgentAction::Abstain { reason } => Some(FinalAnswer::Abstain { reason: reason.clone() }),
        _ => None,
    });
    Trajectory {
        trace_id: trace.trace_id.clone(),
        seed: trace.seed.clone(),
        tool_calls: executed.iter().filter_map(|s| tool_call(s)).collect(),
        final_answer,
        outcome: trace.outcome,
    }
}
