// SPDX-License-Identifier: Apache-2.0

//! Reductions and small statistical kernels shared by guidance and metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Norms below this are treated as zero by [`cosine_sim`].
pub const ZERO_NORM: f64 = 1e-12;

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation. The split points depend only on the length,
/// so the result is bit-identical for a given input regardless of threading.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() <= PAIRWISE_BLOCK {
        let mut s = 0.0;
        for (x, y) in a.iter().zip(b) {
            s += x * y;
        }
        return s;
    }
    let mid = a.len() / 2;
    pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
}

/// Dot product of equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    pairwise_dot(a, b)
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`, or 0 when either norm is below [`ZERO_NORM`].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "cosine_sim: length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::contract("cosine_sim: empty vectors"));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    // a single rounded sqrt keeps Sim(a, a) at exactly 1
    (dot(a, b) / (dot(a, a) * dot(b, b)).sqrt()).clamp(-1.0, 1.0)
}

/// Nearest-rank `q`-quantile of the tensor's entries: sort ascending and take
/// the element at index `ceil(q·N) − 1`.
///
/// Used with a strict `>` comparison downstream, so for all-distinct entries
/// exactly `N − ceil(q·N)` elements exceed the threshold. Rank 0 (`q = 0`)
/// returns the float just below the minimum so that every element passes.
pub fn percentile_threshold(x: &Tensor3, q: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::config(format!("percentile q = {q} must lie in [0, 1)")));
    }
    if x.is_empty() {
        return Err(Error::contract("percentile_threshold: empty tensor"));
    }
    let mut sorted = x.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(match quantile_rank(q, sorted.len()) {
        0 => sorted[0].next_down(),
        r => sorted[r - 1],
    })
}

/// `ceil(q·n)`, snapping products within 1e-9 of an integer first so that
/// e.g. `0.7 · 10` counts as 7 rather than 8.
pub fn quantile_rank(q: f64, n: usize) -> usize {
    let x = q * n as f64;
    let r = x.round();
    let rank = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (rank.max(0.0) as usize).min(n)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::contract(
            "spearman: need two equal-length series of at least 2 points",
        ));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    Ok(pearson(&rx, &ry))
}

/// Pearson correlation; 0 when either series has (numerically) zero variance,
/// i.e. a spread below `ZERO_NORM` relative to its mean.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = pairwise_sum(xs) / n;
    let my = pairwise_sum(ys) / n;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let dy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let sxx = dot(&dx, &dx);
    let syy = dot(&dy, &dy);
    let floor = |m: f64| n * (ZERO_NORM * (1.0 + m.abs())).powi(2);
    if sxx <= floor(mx) || syy <= floor(my) {
        return 0.0;
    }
    (dot(&dx, &dy) / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && xs[order[end]] == xs[order[k]] {
            end += 1;
        }
        let avg = (k + end - 1) as f64 / 2.0 + 1.0;
        for &idx in &order[k..end] {
            ranks[idx] = avg;
        }
        k = end;
    }
    ranks
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&sq) / n).sqrt())
}
