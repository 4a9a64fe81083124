//! Wilcoxon matched-pairs signed-rank test.
//!
//! Differences are `with - without`. Zero differences are dropped and tied
//! magnitudes share their mid-rank. The reported statistic is W+, the rank
//! sum of positive differences.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Largest n (after dropping zeros) for which [`wilcoxon_signed_rank`] uses
/// the exact null distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WilcoxonError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no non-zero differences")]
    NZero,
    #[error("non-finite sample value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub p_value: f64,
    pub method: Method,
}

/// Mid-ranks of `|d|` (1-based) in input order.
pub fn signed_ranks(diffs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let mut ranks = vec![0.0; diffs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
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

fn nonzero_diffs(with: &[f64], without: &[f64]) -> Result<Vec<f64>, WilcoxonError> {
    if with.len() != without.len() {
        return Err(WilcoxonError::LengthMismatch(with.len(), without.len()));
    }
    if with.iter().chain(without).any(|x| !x.is_finite()) {
        return Err(WilcoxonError::NonFinite);
    }
    let diffs: Vec<f64> = with.iter().zip(without).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(WilcoxonError::NZero);
    }
    Ok(diffs)
}

fn rank_sums(diffs: &[f64], ranks: &[f64]) -> (f64, f64) {
    let w_plus: f64 = diffs.iter().zip(ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    (w_plus, total - w_plus)
}

/// Exact two-sided p under the null, counting sign assignments over the
/// observed (possibly tied) ranks.
pub fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    // mid-ranks are multiples of 1/2, so doubled ranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w = (w_plus * 2.0).round() as usize;
    let all: f64 = counts.iter().sum();
    let lower: f64 = counts[..=w].iter().sum();
    let upper: f64 = counts[w..].iter().sum();
    (2.0 * lower.min(upper) / all).min(1.0)
}

/// Normal approximation with tie and continuity corrections.
pub fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - std_normal.cdf(z))).min(1.0)
}

fn run(with: &[f64], without: &[f64], method: Option<Method>) -> Result<WilcoxonResult, WilcoxonError> {
    let diffs = nonzero_diffs(with, without)?;
    let ranks = signed_ranks(&diffs);
    let (w_plus, w_minus) = rank_sums(&diffs, &ranks);
    let method = method.unwrap_or(if diffs.len() <= EXACT_MAX_N { Method::Exact } else { Method::Normal });
    let p_value = match method {
        Method::Exact => exact_p(&ranks, w_plus),
        Method::Normal => normal_p(&ranks, w_plus),
    };
    Ok(WilcoxonResult {
        w_plus,
        w_minus,
        n: diffs.len(),
        p_value,
        method,
    })
}

/// Exact p for n <= [`EXACT_MAX_N`], normal approximation beyond.
pub fn wilcoxon_signed_rank(with: &[f64], without: &[f64]) -> Result<WilcoxonResult, WilcoxonError> {
    run(with, without, None)
}

pub fn wilcoxon_with_method(
    with: &[f64],
    without: &[f64],
    method: Method,
) -> Result<WilcoxonResult, WilcoxonError> {
    run(with, without, Some(method))
}
