//! Clustering metrics, held-out density scores and parameter tracking.

use std::collections::HashMap;
use std::hash::Hash;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dpm::{
    assign_new_points, compute_counts, expected_mixture_weights, predictive_log_lik, MixtureState,
    Responsibilities,
};
use crate::error::{Error, Result};
use crate::forgetting::ForgettingState;
use crate::stream::{StreamBatch, TruthBatch};

/// Components with at least this soft count are considered active.
pub const ACTIVE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub test_loglik_per_point: f64,
    /// `None` when fewer than two clusters are predicted.
    pub silhouette: Option<f64>,
    pub nmi: f64,
    pub ari: f64,
    pub purity: f64,
    pub n_active_components: usize,
    pub e_rho_mean: Option<f64>,
}

/// Per-row argmax, ties to the lowest index.
pub fn hard_assign(phi: &Responsibilities) -> Vec<usize> {
    phi.as_array()
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Contingency table between two labelings with dense row/column indices.
struct Contingency {
    table: Vec<Vec<f64>>,
    rows: Vec<f64>,
    cols: Vec<f64>,
    n: f64,
}

fn index_labels<L: Eq + Hash + Copy>(labels: &[L]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<L, usize> = HashMap::new();
    let idx = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect();
    (idx, ids.len())
}

fn contingency<A: Eq + Hash + Copy, B: Eq + Hash + Copy>(
    pred: &[A],
    truth: &[B],
) -> Result<Contingency> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("labelings".into()));
    }
    let (p, np) = index_labels(pred);
    let (t, nt) = index_labels(truth);
    let mut table = vec![vec![0.0; nt]; np];
    for (&i, &j) in p.iter().zip(&t) {
        table[i][j] += 1.0;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..nt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok(Contingency {
        table,
        rows,
        cols,
        n: pred.len() as f64,
    })
}

pub fn purity<A: Eq + Hash + Copy, B: Eq + Hash + Copy>(pred: &[A], truth: &[B]) -> Result<f64> {
    let c = contingency(pred, truth)?;
    let hits: f64 = c
        .table
        .iter()
        .map(|r| r.iter().cloned().fold(0.0, f64::max))
        .sum();
    Ok(hits / c.n)
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn nmi<A: Eq + Hash + Copy, B: Eq + Hash + Copy>(pred: &[A], truth: &[B]) -> Result<f64> {
    let c = contingency(pred, truth)?;
    let hp = entropy(&c.rows, c.n);
    let ht = entropy(&c.cols, c.n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0.0 {
                mi += nij / c.n * (c.n * nij / (c.rows[i] * c.cols[j])).ln();
            }
        }
    }
    let denom = 0.5 * (hp + ht);
    Ok((mi.max(0.0) / denom).clamp(0.0, 1.0))
}

fn comb2(x: f64) -> f64 {
    0.5 * x * (x - 1.0)
}

/// Adjusted Rand index from the pair-counting contingency formula.
pub fn ari<A: Eq + Hash + Copy, B: Eq + Hash + Copy>(pred: &[A], truth: &[B]) -> Result<f64> {
    let c = contingency(pred, truth)?;
    let index: f64 = c.table.iter().flatten().map(|&v| comb2(v)).sum();
    let sa: f64 = c.rows.iter().map(|&v| comb2(v)).sum();
    let sb: f64 = c.cols.iter().map(|&v| comb2(v)).sum();
    let total = comb2(c.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette coefficient with Euclidean distances.
pub fn silhouette<L: Eq + Hash + Copy>(points: ArrayView2<f64>, labels: &[L]) -> Result<f64> {
    if points.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: points.nrows(),
            got: labels.len(),
        });
    }
    let (idx, k) = index_labels(labels);
    if k < 2 {
        return Err(Error::Undefined(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = points.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let mut sizes = vec![0usize; k];
    for &i in &idx {
        sizes[i] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        if sizes[idx[i]] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[idx[j]] += euclid(&rows[i], &rows[j]);
            }
        }
        let own = idx[i];
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// One estimated component paired with one true cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub component: usize,
    pub truth: usize,
    pub mean_error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTrack {
    pub pairs: Vec<MatchedPair>,
    /// Fewer active components than true clusters.
    pub shortfall: bool,
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
///
/// Returns the column chosen for each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "assignment needs rows <= cols");
    // potentials formulation, 1-based with a sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

/// Pair the most populated components with the true clusters.
pub fn track_parameters(
    state: &MixtureState,
    phi: &Responsibilities,
    truth: &TruthBatch,
) -> ParameterTrack {
    let counts = compute_counts(phi);
    let k_true = truth.means.len();
    let mut active: Vec<usize> = (0..state.trunc())
        .filter(|&k| counts.e_nk[k] >= ACTIVE_THRESHOLD)
        .collect();
    active.sort_by(|&a, &b| counts.e_nk[b].total_cmp(&counts.e_nk[a]).then(a.cmp(&b)));
    let shortfall = active.len() < k_true;
    active.truncate(k_true);

    let means: Vec<Vec<f64>> = active.iter().map(|&k| state.components[k].mean()).collect();
    let cost: Vec<Vec<f64>> = means
        .iter()
        .map(|m| truth.means.iter().map(|tm| euclid(m, tm)).collect())
        .collect();
    let assignment = min_cost_assignment(&cost);
    let pairs = active
        .iter()
        .zip(&assignment)
        .enumerate()
        .map(|(r, (&k, &j))| MatchedPair {
            component: k,
            truth: j,
            mean_error: cost[r][j],
            std_error: (state.components[k].plugin_std() - truth.stds[j]).abs(),
        })
        .collect();
    ParameterTrack { pairs, shortfall }
}

/// Score a fitted batch on its held-out points.
///
/// Test points get responsibilities from one local pass with frozen
/// globals and the training counts as the assignment prior. Points with
/// label `-1` are excluded from the external metrics.
pub fn evaluate_batch(
    state: &MixtureState,
    train_phi: &Responsibilities,
    batch: &StreamBatch,
    alpha: f64,
    forgetting: &ForgettingState,
) -> Result<BatchMetrics> {
    let counts = compute_counts(train_phi);
    let weights = expected_mixture_weights(&counts, alpha).normalized();
    let test_loglik_per_point = predictive_log_lik(batch.test.view(), state, &weights)?;
    let test_phi = assign_new_points(batch.test.view(), state, &counts, alpha);
    let pred = hard_assign(&test_phi);

    let known: Vec<usize> = (0..pred.len())
        .filter(|&i| batch.test_labels[i] >= 0)
        .collect();
    let (nmi_v, ari_v, purity_v) = if known.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let p: Vec<usize> = known.iter().map(|&i| pred[i]).collect();
        let t: Vec<i64> = known.iter().map(|&i| batch.test_labels[i]).collect();
        (nmi(&p, &t)?, ari(&p, &t)?, purity(&p, &t)?)
    };
    let silhouette = match silhouette(batch.test.view(), &pred) {
        Ok(v) => Some(v),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(BatchMetrics {
        test_loglik_per_point,
        silhouette,
        nmi: nmi_v,
        ari: ari_v,
        purity: purity_v,
        n_active_components: counts
            .e_nk
            .iter()
            .filter(|&&c| c >= ACTIVE_THRESHOLD)
            .count(),
        e_rho_mean: forgetting.e_rho_mean(),
    })
}
