//! Divergence scoring over the Analyst's and Critics' choices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::action::AgentAction;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub model_id: String,
    pub action: AgentAction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// `DS <= theta`: the plurality action.
    Accepted(AgentAction),
    /// `DS > theta`: one representative per distinct action, in proposal order.
    Flagged(Vec<Candidate>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Judgement {
    pub divergence_score: f64,
    pub verdict: Verdict,
}

impl Judgement {
    pub fn is_flagged(&self) -> bool {
        matches!(self.verdict, Verdict::Flagged(_))
    }
}

/// `1 - (largest agreeing group) / |M|` over canonical-equality classes.
pub fn divergence_score(actions: &[&AgentAction]) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in actions {
        *counts.entry(a.canonical_key()).or_default() += 1;
    }
    let plurality = counts.values().copied().max().unwrap_or(0);
    1.0 - plurality as f64 / actions.len() as f64
}

/// Scores the proposals (the first entry is the Analyst's) and either picks
/// the plurality action or flags the step. Plurality ties prefer the Analyst's
/// class, then the smallest canonical key.
pub fn judge_step(proposals: &[Candidate], theta: f64) -> Judgement {
    assert!(!proposals.is_empty(), "judge needs at least one proposal");
    let actions: Vec<&AgentAction> = proposals.iter().map(|c| &c.action).collect();
    let ds = divergence_score(&actions);

    // class key -> (count, first proposal index)
    let mut classes: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, c) in proposals.iter().enumerate() {
        classes.entry(c.action.canonical_key()).or_insert((0, i)).0 += 1;
    }

    if ds > theta {
        let mut firsts: Vec<usize> = classes.values().map(|&(_, first)| first).collect();
        firsts.sort_unstable();
        return Judgement {
            divergence_score: ds,
            verdict: Verdict::Flagged(firsts.into_iter().map(|i| proposals[i].clone()).collect()),
        };
    }

    let analyst_key = proposals[0].action.canonical_key();
    let (_, &(_, first)) = classes
        .iter()
        .max_by(|(ka, (ca, _)), (kb, (cb, _))| {
            ca.cmp(cb)
                .then_with(|| (*ka == &analyst_key).cmp(&(*kb == &analyst_key)))
                .then_with(|| kb.cmp(ka))
        })
        .expect("non-empty proposals");
    Judgement {
        divergence_score: ds,
        verdict: Verdict::Accepted(proposals[first].action.clone()),
    }
}
