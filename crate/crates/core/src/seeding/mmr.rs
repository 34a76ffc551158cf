//! Maximal marginal relevance with novelty as the relevance term.

use std::cmp::Ordering;

use crate::embedding::{dot, EmbeddingVector};

use super::SeedingError;

#[derive(Debug, Clone, Copy)]
pub struct MmrCandidate<'a> {
    pub query: &'a str,
    pub embedding: &'a EmbeddingVector,
    pub novelty: f64,
}

/// `lambda * novelty - (1 - lambda) * max_s cos(e, e_s)`; the penalty is 0
/// when nothing is selected yet.
pub fn mmr_score(candidate: &MmrCandidate<'_>, selected: &[&EmbeddingVector], lambda: f64) -> f64 {
    let max_sim = selected
        .iter()
        .map(|s| dot(candidate.embedding.values(), s.values()))
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))))
        .unwrap_or(0.0);
    lambda * candidate.novelty - (1.0 - lambda) * max_sim
}

/// Index of the MMR-best candidate; ties go to the lexicographically smallest query.
pub fn mmr_next(
    candidates: &[MmrCandidate<'_>],
    selected: &[&EmbeddingVector],
    lambda: f64,
) -> Result<usize, SeedingError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let score = mmr_score(c, selected, lambda);
        best = match best {
            None => Some((i, score)),
            Some((j, s)) => match score.partial_cmp(&s).unwrap_or(Ordering::Less) {
                Ordering::Greater => Some((i, score)),
                Ordering::Equal if c.query < candidates[j].query => Some((i, score)),
                _ => Some((j, s)),
            },
        };
    }
    best.map(|(i, _)| i).ok_or(SeedingError::NoCandidates)
}
