//! Greedy MAP inference for a DPP with cosine-similarity kernel.
//!
//! Incremental Cholesky updates: after selecting `j`, every remaining item's
//! residual variance `d2[i]` drops by `e_i^2` with
//! `e_i = (L[j,i] - <c_j, c_i>) / sqrt(d2[j])`. The selected `d2[j]` is the
//! determinant ratio `det(L_{S+j}) / det(L_S)`.

use std::cmp::Ordering;

use crate::embedding::{dot, EmbeddingVector};

/// Added to the kernel diagonal so duplicate embeddings stay non-singular.
pub const DIAGONAL_JITTER: f64 = 1e-6;
const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DppSelection {
    /// Selected item indices, in greedy order.
    pub order: Vec<usize>,
    /// Determinant ratio contributed by each pick, clamped at >= 0.
    pub gains: Vec<f64>,
}

impl DppSelection {
    /// `ln det(L_S)` after each step.
    pub fn log_det_path(&self) -> Vec<f64> {
        self.gains
            .iter()
            .scan(0.0, |acc, g| {
                *acc += g.ln();
                Some(*acc)
            })
            .collect()
    }
}

pub fn kernel_entry(a: &EmbeddingVector, b: &EmbeddingVector, same: bool) -> f64 {
    dot(a.values(), b.values()) + if same { DIAGONAL_JITTER } else { 0.0 }
}

/// Greedily picks `budget` items; ties on the gain go to the smallest label.
pub fn greedy_map(embeddings: &[EmbeddingVector], labels: &[&str], budget: usize) -> DppSelection {
    let n = embeddings.len();
    let budget = budget.min(n);
    let mut d2: Vec<f64> = embeddings.iter().map(|e| kernel_entry(e, e, true)).collect();
    let mut chol: Vec<Vec<f64>> = vec![Vec::with_capacity(budget); n];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(budget);
    let mut gains = Vec::with_capacity(budget);

    for _ in 0..budget {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            best = match best {
                None => Some(i),
                Some(j) => match d2[i].partial_cmp(&d2[j]).unwrap_or(Ordering::Less) {
                    Ordering::Greater => Some(i),
                    Ordering::Equal if labels[i] < labels[j] => Some(i),
                    _ => Some(j),
                },
            };
        }
        let Some(j) = best else { break };
        let gain = d2[j].max(0.0);
        taken[j] = true;
        order.push(j);
        gains.push(gain);
        let root = gain.sqrt();
        let cj = chol[j].clone();
        for i in (0..n).filter(|&i| !taken[i]) {
            let e = if gain > RESIDUAL_FLOOR {
                (kernel_entry(&embeddings[j], &embeddings[i], false) - dot(&cj, &chol[i])) / root
            } else {
                0.0
            };
            chol[i].push(e);
            d2[i] = (d2[i] - e * e).max(0.0);
        }
    }
    DppSelection { order, gains }
}
