//! Wire types of the review HTTP API, shared by the service and its clients.

use serde::{Deserialize, Serialize};

use super::queue::{ReviewDecision, ReviewItem, ReviewStatus, ReviewerRole, Verdict};
use crate::corpus::Corpus;
use crate::simulation::action::AgentAction;

pub const REVIEWER_HEADER: &str = "X-Reviewer-Id";
pub const DEFAULT_PORT: u16 = 8377;
const SNIPPET_CHARS: usize = 400;

/// Guidance shown next to every item.
pub const RUBRIC: [&str; 3] = [
    "Query-document relevance: do the retrieved or cited documents address the seed question?",
    "Evidence sufficiency: is there enough evidence to justify the proposed next step?",
    "Synthesis faithfulness: is every claim in a proposed answer supported by its cited documents?",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub item_id: String,
    pub trace_id: String,
    pub step_index: usize,
    pub seed_query: String,
    pub divergence_score: f64,
    pub candidate_count: usize,
    pub double_annotated: bool,
    pub status: ReviewStatus,
    pub needs_adjudication: bool,
    pub decision_count: usize,
    pub version: u64,
}

impl From<&ReviewItem> for ItemSummary {
    fn from(i: &ReviewItem) -> Self {
        Self {
            item_id: i.item_id.clone(),
            trace_id: i.trace_id.clone(),
            step_index: i.step_index,
            seed_query: i.seed_query.clone(),
            divergence_score: i.divergence_score,
            candidate_count: i.candidates.len(),
            double_annotated: i.double_annotated,
            status: i.status,
            needs_adjudication: i.needs_adjudication,
            decision_count: i.decisions.len(),
            version: i.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSnippet {
    pub candidate_index: usize,
    pub doc_id: String,
    /// Absent when the document is not in the loaded corpus.
    pub snippet: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDetail {
    #[serde(flatten)]
    pub item: ReviewItem,
    pub evidence: Vec<EvidenceSnippet>,
    pub rubric: Vec<String>,
}

fn snippet(text: &str) -> String {
    match text.char_indices().nth(SNIPPET_CHARS) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_string(),
    }
}

impl ItemDetail {
    /// Attaches the documents each candidate cites (synthesize) or operates on
    /// (rerank, summarize).
    pub fn build(item: ReviewItem, corpus: Option<&Corpus>) -> Self {
        let mut evidence = Vec::new();
        for (i, c) in item.candidates.iter().enumerate() {
            for doc_id in c.action.referenced_doc_ids() {
                evidence.push(EvidenceSnippet {
                    candidate_index: i,
                    doc_id: doc_id.clone(),
                    snippet: corpus.and_then(|c| c.document(doc_id)).map(|d| snippet(&d.text)),
                });
            }
        }
        Self {
            item,
            evidence,
            rubric: RUBRIC.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Body of `POST /api/review/items/{id}/decision`; the reviewer comes from
/// the `X-Reviewer-Id` header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_candidate_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_action: Option<AgentAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    /// Item version the reviewer saw; a mismatch is a conflict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_version: Option<u64>,
}

impl DecisionRequest {
    pub fn into_decision(self, reviewer_id: &str, decided_at: u64) -> ReviewDecision {
        ReviewDecision {
            reviewer_id: reviewer_id.to_string(),
            role: ReviewerRole::Annotator,
            verdict: self.verdict,
            chosen_candidate_index: self.chosen_candidate_index,
            revised_action: self.revised_action,
            notes: self.notes,
            decided_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub message: String,
}
