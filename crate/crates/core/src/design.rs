//! Pair formation, pair re-ordering, within-pair randomization and
//! closeness diagnostics.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::PairingPlan;
use crate::stream::Stream;

/// Empirical closeness of a plan: mean within-pair distance (r = 1, 2) and
/// the mean squared distance between members of consecutive pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDiagnostics {
    pub mean_within_pair_dist_r1: f64,
    pub mean_within_pair_dist_r2: f64,
    pub cross_pair_dist_r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AssignmentSeed(pub u64);

/// Pairs units by sorting a scalar covariate: the two smallest form the first
/// pair, the next two the second, and so on. Ties keep input order.
pub fn match_pairs_sorted(x: &[f64]) -> Result<PairingPlan> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::OddUnitCount(x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matching covariate"));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    PairingPlan::new(idx.chunks_exact(2).map(|c| (c[0], c[1])).collect())
}

/// Row-major copy of `x` with every column scaled to unit sample variance.
fn standardized_rows(x: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = x.shape();
    let mut scale = vec![1.0; cols];
    let mut center = vec![0.0; cols];
    if rows > 1 {
        for k in 0..cols {
            let col = x.column(k);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rows - 1) as f64;
            center[k] = mean;
            if var > 0.0 {
                scale[k] = var.sqrt();
            }
        }
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for k in 0..cols {
            out.push((x[(i, k)] - center[k]) / scale[k]);
        }
    }
    out
}

#[inline]
fn sq_dist(rows: &[f64], k: usize, i: usize, j: usize) -> f64 {
    rows[i * k..(i + 1) * k]
        .iter()
        .zip(&rows[j * k..(j + 1) * k])
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Strict total order on edges: distance, then smaller index pair.
#[inline]
fn edge_cmp(d1: f64, e1: (usize, usize), d2: f64, e2: (usize, usize)) -> Ordering {
    let norm = |(a, b): (usize, usize)| if a < b { (a, b) } else { (b, a) };
    d1.total_cmp(&d2).then_with(|| norm(e1).cmp(&norm(e2)))
}

/// Greedy nearest-neighbour perfect matching on standardized Euclidean
/// distance: the globally closest unmatched pair is matched first, ties going
/// to the smallest index pair.
///
/// Computed with a nearest-neighbour chain. Under a strict edge order, a
/// mutual nearest-neighbour pair is locally dominant, and matching locally
/// dominant edges in any order reproduces the globally greedy matching. The
/// returned plan lists pairs in greedy (ascending distance) order.
pub fn match_pairs_greedy(x: &DMatrix<f64>) -> Result<PairingPlan> {
    let (n_units, k) = x.shape();
    if n_units % 2 != 0 {
        return Err(Error::OddUnitCount(n_units));
    }
    if n_units < 2 {
        return Err(Error::TooFewPairs { required: 1, found: 0 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matching covariates"));
    }
    let rows = standardized_rows(x);
    let mut matched = vec![false; n_units];

    let nearest = |i: usize, matched: &[bool]| -> (usize, f64) {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..n_units {
            if j == i || matched[j] {
                continue;
            }
            let d = sq_dist(&rows, k, i, j);
            if best == usize::MAX || edge_cmp(d, (i, j), best_d, (i, best)) == Ordering::Less {
                best = j;
                best_d = d;
            }
        }
        (best, best_d)
    };

    let mut found: Vec<(f64, usize, usize)> = Vec::with_capacity(n_units / 2);
    let mut chain: Vec<usize> = Vec::new();
    for start in 0..n_units {
        if matched[start] {
            continue;
        }
        chain.push(start);
        while let Some(&i) = chain.last() {
            let (j, d) = nearest(i, &matched);
            if chain.len() >= 2 && chain[chain.len() - 2] == j {
                matched[i] = true;
                matched[j] = true;
                found.push((d, i.min(j), i.max(j)));
                chain.truncate(chain.len() - 2);
            } else {
                chain.push(j);
            }
        }
    }
    found.sort_by(|a, b| edge_cmp(a.0, (a.1, a.2), b.0, (b.1, b.2)));
    PairingPlan::new(found.into_iter().map(|(_, a, b)| (a, b)).collect())
}

/// Re-sequences pairs so that consecutive pairs are close: starting from the
/// lexicographically smallest pair centroid, repeatedly append the nearest
/// remaining centroid (standardized Euclidean distance, earliest pair on
/// ties). Membership is untouched.
pub fn reorder_pairs(plan: &PairingPlan, x: &DMatrix<f64>) -> Result<PairingPlan> {
    if x.nrows() != plan.unit_count() {
        return Err(Error::LengthMismatch {
            what: "covariate rows",
            expected: plan.unit_count(),
            found: x.nrows(),
        });
    }
    let n = plan.n_pairs();
    if n <= 1 {
        return Ok(plan.clone());
    }
    let k = x.ncols();
    let rows = standardized_rows(x);
    let centroids: Vec<f64> = plan
        .pairs()
        .iter()
        .flat_map(|&(a, b)| (0..k).map(move |c| (a, b, c)))
        .map(|(a, b, c)| 0.5 * (rows[a * k + c] + rows[b * k + c]))
        .collect();
    let centroid = |j: usize| &centroids[j * k..(j + 1) * k];

    let first = (0..n)
        .min_by(|&a, &b| {
            centroid(a)
                .iter()
                .zip(centroid(b))
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        })
        .expect("n > 1");
    let mut used = vec![false; n];
    let mut order = Vec::with_capacity(n);
    used[first] = true;
    order.push(first);
    let mut current = first;
    for _ in 1..n {
        let next = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| {
                sq_dist(&centroids, k, current, a)
                    .total_cmp(&sq_dist(&centroids, k, current, b))
                    .then(a.cmp(&b))
            })
            .expect("a pair remains");
        used[next] = true;
        order.push(next);
        current = next;
    }
    plan.permuted(&order)
}

/// Flips an independent fair coin per pair; heads treats the first-listed
/// unit. Pair `j` always reads draw `j` of the seed's stream.
pub fn assign_within_pairs(plan: &PairingPlan, seed: AssignmentSeed) -> Vec<u8> {
    assign_with_stream(plan, &Stream::new(seed.0))
}

pub(crate) fn assign_with_stream(plan: &PairingPlan, stream: &Stream) -> Vec<u8> {
    let mut d = vec![0u8; plan.unit_count()];
    for (j, &(a, b)) in plan.pairs().iter().enumerate() {
        if stream.coin_at(j as u64) {
            d[a] = 1;
        } else {
            d[b] = 1;
        }
    }
    d
}

/// Raw-scale closeness sums:
/// `(1/n) sum_j ||X_a - X_b||^r` for r in {1, 2}, and the squared distance
/// between members of pairs `2j` and `2j+1` for `j < floor(n/2)`, averaged
/// over the four member combinations.
pub fn closeness_diagnostics(plan: &PairingPlan, x: &DMatrix<f64>) -> Result<MatchDiagnostics> {
    if x.nrows() != plan.unit_count() {
        return Err(Error::LengthMismatch {
            what: "covariate rows",
            expected: plan.unit_count(),
            found: x.nrows(),
        });
    }
    let n = plan.n_pairs() as f64;
    let d2 = |i: usize, j: usize| (x.row(i) - x.row(j)).norm_squared();
    let (mut r1, mut r2) = (0.0, 0.0);
    for &(a, b) in plan.pairs() {
        let s = d2(a, b);
        r1 += s.sqrt();
        r2 += s;
    }
    let mut cross = 0.0;
    for quad in plan.pairs().chunks_exact(2) {
        let (a, b) = quad[0];
        let (c, e) = quad[1];
        cross += d2(a, c) + d2(a, e) + d2(b, c) + d2(b, e);
    }
    Ok(MatchDiagnostics {
        mean_within_pair_dist_r1: r1 / n,
        mean_within_pair_dist_r2: r2 / n,
        cross_pair_dist_r2: cross / (4.0 * n),
    })
}
