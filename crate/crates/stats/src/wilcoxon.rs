use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::StatsError;

/// Largest number of nonzero differences for which the p-value is computed exactly.
pub const EXACT_MAX_N: usize = 20;

/// Differences closer than this are the same for ranking, and smaller ones count as zero.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n_used: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub w: f64,
    pub p_two_sided: f64,
    pub method: Method,
}

/// Average ranks of `abs_sorted`, which must be ascending.
fn average_ranks(abs_sorted: &[f64]) -> Vec<f64> {
    let mut ranks = vec![0.0; abs_sorted.len()];
    let mut i = 0;
    while i < abs_sorted.len() {
        let mut j = i;
        while j + 1 < abs_sorted.len() && (abs_sorted[j + 1] - abs_sorted[i]).abs() <= TIE_EPS {
            j += 1;
        }
        // Positions i..=j hold ranks i+1..=j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        ranks[i..=j].fill(avg);
        i = j + 1;
    }
    ranks
}

/// Two-sided exact p: the share of the 2^n sign assignments over `ranks` whose
/// min(W+, W-) is at most `w`. Ranks must be multiples of 0.5.
pub fn p_value_exact(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[s] = number of sign assignments with doubled W+ equal to s.
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2 = (w * 2.0).round() as usize;
    let hits: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s).min(total - s) <= w2)
        .map(|(_, c)| c)
        .sum();
    let p = hits as f64 / 2f64.powi(ranks.len() as i32);
    p.min(1.0)
}

/// Two-sided p from the normal approximation with tie-corrected variance and a
/// continuity correction of 0.5.
pub fn p_value_normal(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < ranks.len() {
        let j = ranks[i..].iter().take_while(|r| (**r - ranks[i]).abs() < 1e-12).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w - mean + 0.5) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.cdf(z)).min(1.0)
}

/// Wilcoxon signed-rank test on paired differences. Zero differences are dropped and
/// tied magnitudes get average ranks.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult, StatsError> {
    let mut used: Vec<f64> = diffs.iter().copied().filter(|d| d.abs() > TIE_EPS).collect();
    if used.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    used.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let abs: Vec<f64> = used.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    // Float sums of nothing are -0.0; start from +0.0 instead.
    let rank_sum = |positive: bool| {
        used.iter()
            .zip(&ranks)
            .filter(|(d, _)| (**d > 0.0) == positive)
            .fold(0.0, |acc, (_, r)| acc + r)
    };
    let (w_plus, w_minus) = (rank_sum(true), rank_sum(false));
    let w = w_plus.min(w_minus);
    let (p_two_sided, method) = if used.len() <= EXACT_MAX_N {
        (p_value_exact(&ranks, w), Method::Exact)
    } else {
        (p_value_normal(&ranks, w), Method::NormalApprox)
    };
    Ok(WilcoxonResult {
        n_used: used.len(),
        w_plus,
        w_minus,
        w,
        p_two_sided,
        method,
    })
}
