//! Significance statistics: Mann-Whitney U, Cohen's d, Holm-Bonferroni and
//! chi-squared with Cramér's V.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `min(U1, U2)`.
    pub u: f64,
    /// U statistic of the first sample.
    pub u1: f64,
    pub z: f64,
    /// Two-sided, normal approximation with tie and continuity correction.
    pub p: f64,
}

/// 1-based ranks with ties given their midrank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::InsufficientSamples("mann-whitney needs two non-empty samples".into()));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&all);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let u2 = n1 * n2 - u1;

    let n = n1 + n2;
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let variance = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let mean = n1 * n2 / 2.0;
    let (z, p) = if variance > 0.0 {
        let z = ((u1 - mean).abs() - 0.5).max(0.0) / variance.sqrt();
        let normal = Normal::standard();
        (z, (2.0 * (1.0 - normal.cdf(z))).min(1.0))
    } else {
        (0.0, 1.0)
    };
    Ok(MannWhitney {
        u: u1.min(u2),
        u1,
        z,
        p,
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Effect size `|mean_a - mean_b| / pooled_sd`, pooled over `n - 1` variances.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::InsufficientSamples("cohen's d needs two samples of size >= 2".into()));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled = (((n1 - 1.0) * sample_variance(a) + (n2 - 1.0) * sample_variance(b)) / (n1 + n2 - 2.0)).sqrt();
    if pooled == 0.0 || !pooled.is_finite() {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((mean(a) - mean(b)).abs() / pooled)
}

/// Holm-Bonferroni step-down; `true` marks a rejected hypothesis.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut reject = vec![false; m];
    for (k, &i) in order.iter().enumerate() {
        if p_values[i] <= alpha / (m - k) as f64 {
            reject[i] = true;
        } else {
            break;
        }
    }
    reject
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub dof: usize,
    pub p: f64,
    pub cramers_v: f64,
}

/// Pearson chi-squared test of independence on a contingency table
/// (rows = groups, columns = categories). All-zero rows and columns are dropped.
pub fn chi_squared(table: &[Vec<f64>]) -> Result<ChiSquaredTest, MetricsError> {
    let cols = table.first().map_or(0, Vec::len);
    if table.iter().any(|r| r.len() != cols) {
        return Err(MetricsError::InsufficientSamples("ragged contingency table".into()));
    }
    let keep_cols: Vec<usize> = (0..cols).filter(|&c| table.iter().map(|r| r[c]).sum::<f64>() > 0.0).collect();
    let rows: Vec<Vec<f64>> = table
        .iter()
        .filter(|r| r.iter().sum::<f64>() > 0.0)
        .map(|r| keep_cols.iter().map(|&c| r[c]).collect())
        .collect();
    let (r, c) = (rows.len(), keep_cols.len());
    if r < 2 || c < 2 {
        return Err(MetricsError::InsufficientSamples("chi-squared needs a table of at least 2x2 non-empty cells".into()));
    }
    let row_totals: Vec<f64> = rows.iter().map(|row| row.iter().sum()).collect();
    let col_totals: Vec<f64> = (0..c).map(|j| rows.iter().map(|row| row[j]).sum()).collect();
    let total: f64 = row_totals.iter().sum();
    let mut statistic = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = row_totals[i] * col_totals[j] / total;
            statistic += (observed - expected).powi(2) / expected;
        }
    }
    let dof = (r - 1) * (c - 1);
    let dist = ChiSquared::new(dof as f64).expect("dof >= 1");
    Ok(ChiSquaredTest {
        statistic,
        dof,
        p: 1.0 - dist.cdf(statistic),
        cramers_v: (statistic / (total * (r.min(c) - 1) as f64)).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub group_a: String,
    pub group_b: String,
    pub mann_whitney_u: f64,
    pub p: f64,
    /// Absent when the pooled standard deviation is zero.
    pub cohens_d: Option<f64>,
    pub holm_reject: bool,
}

/// All pairwise comparisons between labeled groups, Holm-corrected together.
pub fn significance_tests(groups: &[(String, Vec<f64>)], alpha: f64) -> Result<Vec<PairwiseTest>, MetricsError> {
    if groups.len() < 2 {
        return Err(MetricsError::InsufficientSamples("need at least two groups".into()));
    }
    if let Some((name, _)) = groups.iter().find(|(_, s)| s.len() < 2) {
        return Err(MetricsError::InsufficientSamples(format!("group `{name}` has fewer than 2 samples")));
    }
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (a, b) = (&groups[i].1, &groups[j].1);
            let mw = mann_whitney(a, b)?;
            let d = match cohens_d(a, b) {
                Ok(d) => Some(d),
                Err(MetricsError::ZeroVariance) => None,
                Err(e) => return Err(e),
            };
            out.push(PairwiseTest {
                group_a: groups[i].0.clone(),
                group_b: groups[j].0.clone(),
                mann_whitney_u: mw.u,
                p: mw.p,
                cohens_d: d,
                holm_reject: false,
            });
        }
    }
    let p: Vec<f64> = out.iter().map(|t| t.p).collect();
    for (t, r) in out.iter_mut().zip(holm_bonferroni(&p, alpha)) {
        t.holm_reject = r;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn complete_separation_u_zero() {
        assert_eq!(mann_whitney(&[1.0, 2.0], &[3.0, 4.0]).unwrap().u, 0.0);
    }

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn d_three() {
        assert_relative_eq!(cohens_d(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), 3.0, epsilon = 1e-12);
        assert!(matches!(cohens_d(&[1.0, 1.0], &[1.0, 1.0]), Err(MetricsError::ZeroVariance)));
    }

    #[test]
    fn holm_ladder_stops() {
        assert_eq!(holm_bonferroni(&[0.01, 0.04, 0.03], 0.05), [true, false, false]);
        assert_eq!(holm_bonferroni(&[0.01, 0.02, 0.04], 0.05), [true, true, true]);
        assert!(holm_bonferroni(&[], 0.05).is_empty());
    }

    #[test]
    fn chi_squared_independent_table_is_zero() {
        let t = chi_squared(&[vec![10.0, 20.0], vec![20.0, 40.0]]).unwrap();
        assert_relative_eq!(t.statistic, 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.cramers_v, 0.0, epsilon = 1e-9);
        assert_relative_eq!(t.p, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn chi_squared_perfect_association() {
        let t = chi_squared(&[vec![50.0, 0.0], vec![0.0, 50.0]]).unwrap();
        assert_relative_eq!(t.statistic, 100.0, epsilon = 1e-9);
        assert_relative_eq!(t.cramers_v, 1.0, epsilon = 1e-12);
        assert_eq!(t.dof, 1);
    }

    #[test]
    fn pairwise_covers_every_pair() {
        let groups = vec![
            ("a".to_string(), vec![1.0, 2.0, 3.0]),
            ("b".to_string(), vec![4.0, 5.0, 6.0]),
            ("c".to_string(), vec![1.0, 1.0, 1.0]),
        ];
        let t = significance_tests(&groups, 0.05).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].cohens_d, Some(3.0));
    }
}
