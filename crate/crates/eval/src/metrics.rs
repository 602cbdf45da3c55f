//! Ranking-quality and fix-success metrics: Quality@Best, NDCG@k, MRR,
//! tie-corrected Kendall rank correlation, and pass-rate aggregation.
//!
//! All inputs are judged scores in `[0, 1]` listed in the system's ranking
//! order. Aggregation across problems is a plain mean; callers exclude
//! missing values before aggregating.

use cexroot_core::config::NdcgGain;
use thiserror::Error;

/// Relevance cutoff applied when NDCG runs with binary gain.
pub const BINARY_RELEVANCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    /// All items tie on one side, so rank correlation is undefined.
    #[error("all items are tied on one side; rank correlation undefined")]
    DegenerateRanking,
}

/// Best judged overall across the problem's hypotheses; None when empty.
pub fn quality_at_best(overalls: &[f64]) -> Option<f64> {
    overalls.iter().copied().reduce(f64::max)
}

/// Normalized discounted cumulative gain over the first `k` positions.
///
/// DCG sums `gain_i / log2(i + 1)` over 1-based positions in system order;
/// the ideal ordering sorts gains descending. All-zero gains normalize to
/// 1.0 by convention so a problem with nothing relevant does not punish the
/// ranking.
pub fn ndcg_at_k(rels_in_system_order: &[f64], k: usize, gain: NdcgGain) -> f64 {
    let gains: Vec<f64> = rels_in_system_order
        .iter()
        .map(|&rel| match gain {
            NdcgGain::Linear => rel,
            NdcgGain::Binary => {
                if rel >= BINARY_RELEVANCE_THRESHOLD {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    let dcg = discounted_sum(gains.iter().copied().take(k));
    let mut ideal = gains;
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = discounted_sum(ideal.into_iter().take(k));
    if idcg == 0.0 {
        1.0
    } else {
        dcg / idcg
    }
}

fn discounted_sum(gains: impl Iterator<Item = f64>) -> f64 {
    gains.enumerate().map(|(index, gain)| gain / ((index + 2) as f64).log2()).sum()
}

/// Reciprocal rank of the first hypothesis whose judged overall clears
/// `threshold`; 0.0 when none does.
pub fn mrr(overalls_in_system_order: &[f64], threshold: f64) -> f64 {
    overalls_in_system_order
        .iter()
        .position(|&overall| overall >= threshold)
        .map_or(0.0, |index| 1.0 / (index + 1) as f64)
}

/// Tie-corrected Kendall rank correlation (tau-b) between two score lists
/// over the same items.
///
/// Runs in O(n log n): sort by `(x, y)`, count tie runs, then count
/// discordant pairs as inversions of the y sequence via merge sort.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    assert_eq!(xs.len(), ys.len(), "score lists must pair up");
    let n = xs.len();
    if n < 2 {
        return Err(MetricError::DegenerateRanking);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(ys[a].total_cmp(&ys[b])));

    let tie_pairs = |run: u64| run * (run - 1) / 2;
    let mut x_ties = 0u64;
    let mut joint_ties = 0u64;
    let mut x_run = 1u64;
    let mut joint_run = 1u64;
    for window in order.windows(2) {
        let (a, b) = (window[0], window[1]);
        if xs[a] == xs[b] {
            x_run += 1;
            if ys[a] == ys[b] {
                joint_run += 1;
            } else {
                joint_ties += tie_pairs(joint_run);
                joint_run = 1;
            }
        } else {
            x_ties += tie_pairs(x_run);
            joint_ties += tie_pairs(joint_run);
            x_run = 1;
            joint_run = 1;
        }
    }
    x_ties += tie_pairs(x_run);
    joint_ties += tie_pairs(joint_run);

    let mut y_sorted: Vec<f64> = ys.to_vec();
    y_sorted.sort_by(|a, b| a.total_cmp(b));
    let mut y_ties = 0u64;
    let mut y_run = 1u64;
    for window in y_sorted.windows(2) {
        if window[0] == window[1] {
            y_run += 1;
        } else {
            y_ties += tie_pairs(y_run);
            y_run = 1;
        }
    }
    y_ties += tie_pairs(y_run);

    let total = tie_pairs(n as u64);
    if x_ties == total || y_ties == total {
        return Err(MetricError::DegenerateRanking);
    }

    let mut y_in_x_order: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
    let discordant = count_inversions(&mut y_in_x_order);

    let concordant_minus_discordant = total as i128 - x_ties as i128 - y_ties as i128
        + joint_ties as i128
        - 2 * discordant as i128;
    let denominator = ((total - x_ties) as f64).sqrt() * ((total - y_ties) as f64).sqrt();
    // sqrt rounding can push a perfect correlation a few ulps past 1.
    Ok((concordant_minus_discordant as f64 / denominator).clamp(-1.0, 1.0))
}

/// Pairs `(i, j)` with `i < j` and `values[i] > values[j]`, counted while
/// merge sorting in place. Equal values are kept stable and not counted.
fn count_inversions(values: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut inversions = count_inversions(left) + count_inversions(right);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            merged.push(left[i]);
            i += 1;
        } else {
            inversions += (left.len() - i) as u64;
            merged.push(right[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&left[i..]);
    merged.extend_from_slice(&right[j..]);
    values.copy_from_slice(&merged);
    inversions
}

/// Fraction of true flags; None for an empty corpus.
pub fn rate(flags: &[bool]) -> Option<f64> {
    if flags.is_empty() {
        None
    } else {
        Some(flags.iter().filter(|&&flag| flag).count() as f64 / flags.len() as f64)
    }
}

/// Arithmetic mean; None for an empty list.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Reference pair counter used to cross-check `kendall_tau`. Quadratic and
/// only suitable for small n; kept in the public API so integration tests
/// can compare against it.
pub fn kendall_tau_brute(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    assert_eq!(xs.len(), ys.len(), "score lists must pair up");
    let n = xs.len();
    if n < 2 {
        return Err(MetricError::DegenerateRanking);
    }
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut x_ties, mut y_ties) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i].total_cmp(&xs[j]);
            let dy = ys[i].total_cmp(&ys[j]);
            match (dx, dy) {
                (std::cmp::Ordering::Equal, std::cmp::Ordering::Equal) => {
                    x_ties += 1;
                    y_ties += 1;
                }
                (std::cmp::Ordering::Equal, _) => x_ties += 1,
                (_, std::cmp::Ordering::Equal) => y_ties += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let total = (n * (n - 1) / 2) as i64;
    if x_ties == total || y_ties == total {
        return Err(MetricError::DegenerateRanking);
    }
    let denominator = ((total - x_ties) as f64).sqrt() * ((total - y_ties) as f64).sqrt();
    Ok(((concordant - discordant) as f64 / denominator).clamp(-1.0, 1.0))
}
