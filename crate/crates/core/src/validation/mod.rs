//! Grounding checks, the dual-trigger validation policy and the persistent
//! human review queue.

pub mod api;
pub mod grounding;
pub mod queue;

use serde::{Deserialize, Serialize};

use crate::simulation::action::ActionType;

pub use grounding::{
    grounding_confidence, needs_reretrieval, summarize_grounding, verify_grounding, GroundingReport,
    GroundingSummary,
};
pub use queue::{
    agreement_rate, apply_resolution, apply_review_decision, is_double_annotated, DecisionRecord, QueueStats,
    ReviewDecision, ReviewDraft, ReviewItem, ReviewQueue, ReviewStatus, ReviewerRole, Verdict,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default = "defaults::theta")]
    pub theta: f64,
    #[serde(default = "defaults::grounding_threshold")]
    pub grounding_threshold: f64,
    #[serde(default = "defaults::double_annotation_rate")]
    pub double_annotation_rate: f64,
    #[serde(default = "defaults::max_reretrievals")]
    pub max_reretrievals: usize,
}

mod defaults {
    pub fn theta() -> f64 {
        0.4
    }
    pub fn grounding_threshold() -> f64 {
        0.3
    }
    pub fn double_annotation_rate() -> f64 {
        0.10
    }
    pub fn max_reretrievals() -> usize {
        2
    }
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            theta: defaults::theta(),
            grounding_threshold: defaults::grounding_threshold(),
            double_annotation_rate: defaults::double_annotation_rate(),
            max_reretrievals: defaults::max_reretrievals(),
        }
    }
}

impl ValidationConfig {
    pub fn problems(&self) -> Vec<(String, String)> {
        [
            ("theta", self.theta),
            ("grounding_threshold", self.grounding_threshold),
            ("double_annotation_rate", self.double_annotation_rate),
        ]
        .into_iter()
        .filter(|(_, v)| !(0.0..=1.0).contains(v))
        .map(|(k, v)| (k.to_string(), format!("must be in [0, 1], got {v}")))
        .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ValidationError {
    #[error("unknown doc_id `{0}`")]
    UnknownDocId(String),
    #[error("grounding applies to synthesize/abstain actions, not {0}")]
    NotAnAnswer(ActionType),
    #[error("review item `{0}` not found")]
    UnknownItem(String),
    #[error("item `{item_id}` is already decided or reviewer `{reviewer_id}` already decided it")]
    AlreadyDecided { item_id: String, reviewer_id: String },
    #[error("item `{item_id}` is at version {actual}, request expected {expected}")]
    StaleItem { item_id: String, expected: u64, actual: u64 },
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("review precondition violated: {0}")]
    Precondition(String),
    #[error("no double-annotated items with two decisions")]
    NoDoubleAnnotatedItems,
    #[error("review queue persistence: {0}")]
    Persistence(String),
    #[error("corrupt review queue: {0}")]
    Corrupt(String),
}
