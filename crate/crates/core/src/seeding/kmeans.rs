//! Spherical k-means: k-means++ seeding, Lloyd iterations, unit-norm centroids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster index per input embedding.
    pub labels: Vec<usize>,
    pub centroids: Vec<EmbeddingVector>,
    /// Selected seeds per cluster; filled in by seed selection.
    pub coverage: Vec<usize>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == cluster)
            .map(|(i, _)| i)
    }

    /// Index of the centroid closest to `v` (lowest index on ties).
    pub fn nearest_centroid(&self, v: &EmbeddingVector) -> usize {
        nearest(v.values(), &self.centroids)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[EmbeddingVector]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c.values());
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn plus_plus_init(points: &[EmbeddingVector], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p.values(), points[chosen[0]].values()))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
            pick.expect("positive total weight")
        } else {
            // All points coincide with a center; pick among the unchosen uniformly.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p.values(), points[next].values()));
        }
    }
    chosen
}

fn assign(points: &[EmbeddingVector], centroids: &[EmbeddingVector]) -> Vec<usize> {
    points.iter().map(|p| nearest(p.values(), centroids)).collect()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[EmbeddingVector], labels: &mut [usize], centroids: &mut [EmbeddingVector]) {
    let k = centroids.len();
    for empty in 0..k {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] <= 1 {
                continue;
            }
            let d = sq_dist(p.values(), centroids[labels[i]].values());
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        if let Some(i) = far {
            labels[i] = empty;
            centroids[empty] = points[i].clone();
        }
    }
}

fn update(points: &[EmbeddingVector], labels: &[usize], previous: &[EmbeddingVector]) -> Vec<EmbeddingVector> {
    let dim = points[0].dim();
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    for (p, &l) in points.iter().zip(labels) {
        for (s, v) in sums[l].iter_mut().zip(p.values()) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(previous)
        .map(|(s, prev)| EmbeddingVector::normalized(s).unwrap_or_else(|_| prev.clone()))
        .collect()
}

/// Clusters unit vectors into `min(k, n)` groups. Deterministic for a given `rng_seed`.
///
/// Panics if `points` is empty or `k == 0`.
pub fn cluster_queries(points: &[EmbeddingVector], k: usize, rng_seed: u64) -> ClusterAssignment {
    assert!(!points.is_empty(), "cluster_queries needs at least one point");
    assert!(k >= 1, "k must be positive");
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut centroids: Vec<EmbeddingVector> = plus_plus_init(points, k, &mut rng)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();

    let mut labels = assign(points, &centroids);
    repair_empty(points, &mut labels, &mut centroids);
    for _ in 0..MAX_ITERATIONS {
        let next = update(points, &labels, &centroids);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a.values(), b.values()).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let mut new_labels = assign(points, &centroids);
        repair_empty(points, &mut new_labels, &mut centroids);
        let stable = new_labels == labels;
        labels = new_labels;
        if stable || shift < SHIFT_TOLERANCE {
            break;
        }
    }
    ClusterAssignment {
        labels,
        centroids,
        coverage: vec![0; k],
    }
}
