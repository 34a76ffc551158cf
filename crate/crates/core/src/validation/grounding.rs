//! Token-coverage grounding of synthesized answers against cited documents.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::ValidationError;
use crate::corpus::Corpus;
use crate::simulation::action::AgentAction;
use crate::simulation::trace::TraceStep;
use crate::tokenize::{content_tokens, Stopwords};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub token_coverage: f64,
    pub covered_tokens: BTreeSet<String>,
    pub uncovered_tokens: BTreeSet<String>,
    /// The answer had no content tokens; coverage is reported as 1.0.
    pub vacuous: bool,
    pub is_refusal: bool,
}

impl GroundingReport {
    fn refusal() -> Self {
        Self {
            token_coverage: 0.0,
            covered_tokens: BTreeSet::new(),
            uncovered_tokens: BTreeSet::new(),
            vacuous: false,
            is_refusal: true,
        }
    }
}

/// Coverage of the answer's distinct content tokens by the union of the cited
/// documents' content tokens. Abstentions are reported as refusals.
pub fn verify_grounding(
    answer: &AgentAction,
    corpus: &Corpus,
    stopwords: &Stopwords,
) -> Result<GroundingReport, ValidationError> {
    let (text, cited) = match answer {
        AgentAction::Abstain { .. } => return Ok(GroundingReport::refusal()),
        AgentAction::Synthesize { answer, cited_doc_ids } => (answer, cited_doc_ids),
        other => return Err(ValidationError::NotAnAnswer(other.action_type())),
    };
    let mut evidence: HashSet<String> = HashSet::new();
    for id in cited {
        let doc = corpus
            .document(id)
            .ok_or_else(|| ValidationError::UnknownDocId(id.clone()))?;
        evidence.extend(content_tokens(&doc.text, stopwords));
    }
    let answer_types: BTreeSet<String> = content_tokens(text, stopwords).into_iter().collect();
    if answer_types.is_empty() {
        return Ok(GroundingReport {
            token_coverage: 1.0,
            covered_tokens: BTreeSet::new(),
            uncovered_tokens: BTreeSet::new(),
            vacuous: true,
            is_refusal: false,
        });
    }
    let (covered, uncovered): (BTreeSet<String>, BTreeSet<String>) =
        answer_types.into_iter().partition(|t| evidence.contains(t));
    let total = covered.len() + uncovered.len();
    Ok(GroundingReport {
        token_coverage: covered.len() as f64 / total as f64,
        covered_tokens: covered,
        uncovered_tokens: uncovered,
        vacuous: false,
        is_refusal: false,
    })
}

/// Grounding confidence of a synthesize step (its token coverage).
pub fn grounding_confidence(
    step: &TraceStep,
    corpus: &Corpus,
    stopwords: &Stopwords,
) -> Result<f64, ValidationError> {
    match &step.action {
        AgentAction::Synthesize { .. } => Ok(verify_grounding(&step.action, corpus, stopwords)?.token_coverage),
        other => Err(ValidationError::NotAnAnswer(other.action_type())),
    }
}

/// Strictly below the threshold.
pub fn needs_reretrieval(confidence: f64, threshold: f64) -> bool {
    confidence < threshold
}

/// Uncovered answer tokens in order of first appearance in the answer.
pub fn uncovered_in_answer_order(answer: &str, report: &GroundingReport, stopwords: &Stopwords) -> Vec<String> {
    let mut seen = HashSet::new();
    content_tokens(answer, stopwords)
        .into_iter()
        .filter(|t| report.uncovered_tokens.contains(t) && seen.insert(t.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingSummary {
    pub substantive: usize,
    pub refusals: usize,
    pub grounded: usize,
    /// `grounded / substantive`; refusals are not in the denominator.
    pub grounding_rate: Option<f64>,
    pub mean_token_coverage: Option<f64>,
    /// `(grounded + refusals) / (substantive + refusals)`.
    pub quality_rate: Option<f64>,
}

/// Aggregates reports; an answer counts as grounded when its coverage is at
/// least `threshold`.
pub fn summarize_grounding(reports: &[GroundingReport], threshold: f64) -> GroundingSummary {
    let refusals = reports.iter().filter(|r| r.is_refusal).count();
    let substantive: Vec<&GroundingReport> = reports.iter().filter(|r| !r.is_refusal).collect();
    let grounded = substantive.iter().filter(|r| r.token_coverage >= threshold).count();
    let n = substantive.len();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    GroundingSummary {
        substantive: n,
        refusals,
        grounded,
        grounding_rate: ratio(grounded, n),
        mean_token_coverage: (n > 0)
            .then(|| substantive.iter().map(|r| r.token_coverage).sum::<f64>() / n as f64),
        quality_rate: ratio(grounded + refusals, n + refusals),
    }
}
