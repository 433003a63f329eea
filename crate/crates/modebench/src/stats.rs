//! Paired significance testing and descriptive statistics.
//!
//! The signed-rank test here is exact for small samples: the two-sided
//! p-value is computed from the full permutation distribution of the
//! positive-rank sum over all `2^n` sign assignments (evaluated with a
//! subset-sum convolution rather than explicit enumeration). Above
//! [`EXACT_LIMIT`] nonzero differences it falls back to the normal
//! approximation with tie correction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest number of nonzero differences handled exactly.
pub const EXACT_LIMIT: usize = 25;

/// Two index-aligned series of per-round scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub baseline: Vec<f64>,
    pub treatment: Vec<f64>,
}

impl PairedSample {
    pub fn new(baseline: Vec<f64>, treatment: Vec<f64>) -> Result<PairedSample, StatsError> {
        if baseline.is_empty() || baseline.len() != treatment.len() {
            return Err(StatsError::LengthMismatch {
                baseline: baseline.len(),
                treatment: treatment.len(),
            });
        }
        Ok(PairedSample { baseline, treatment })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Exact,
    NormalApprox,
}

/// Outcome of a signed-rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Sum of ranks of the positive differences (W+).
    pub statistic: f64,
    pub p_two_sided: f64,
    /// Number of nonzero differences that entered the test.
    pub n_effective: usize,
    pub method: Method,
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("all paired differences are zero; no test possible")]
    AllZeroDifferences,
    #[error("empty input")]
    EmptyInput,
    #[error("paired sample lengths differ: baseline {baseline}, treatment {treatment}")]
    LengthMismatch { baseline: usize, treatment: usize },
}

/// Midranks of the absolute differences (ties share the average rank).
fn midranks(abs_diffs: &[f64]) -> Vec<f64> {
    let n = abs_diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| abs_diffs[a].partial_cmp(&abs_diffs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && abs_diffs[order[j + 1]] == abs_diffs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p-value for W+ given the multiset of ranks.
///
/// Ranks are doubled to make midranks integral, then a subset-sum table
/// counts, for every achievable rank sum, how many of the `2^n` sign
/// assignments produce it.
fn exact_p_two_sided(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let assignments = 2f64.powi(ranks.len() as i32);
    let w2 = (w_plus * 2.0).round() as usize;
    let p_le: f64 = counts[..=w2].iter().sum::<f64>() / assignments;
    let p_ge: f64 = counts[w2..].iter().sum::<f64>() / assignments;
    (2.0 * p_le.min(p_ge)).min(1.0)
}

fn normal_approx_p_two_sided(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // tie correction: subtract sum(t^3 - t)/48 over tie groups
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w_plus - mean) / var.sqrt();
    (2.0 * (1.0 - standard_normal_cdf(z.abs()))).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test on paired per-round scores.
///
/// Zero differences are dropped; tied absolute differences share midranks.
pub fn wilcoxon_signed_rank(sample: &PairedSample) -> Result<TestResult, StatsError> {
    if sample.baseline.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let diffs: Vec<f64> = sample
        .treatment
        .iter()
        .zip(&sample.baseline)
        .map(|(t, b)| t - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let signs: Vec<bool> = diffs.iter().map(|d| *d > 0.0).collect();
    let w_plus: f64 = ranks
        .iter()
        .zip(&signs)
        .filter(|(_, &pos)| pos)
        .map(|(r, _)| r)
        .sum();
    let n_effective = diffs.len();
    let (p, method) = if n_effective <= EXACT_LIMIT {
        (exact_p_two_sided(&ranks, w_plus), Method::Exact)
    } else {
        (normal_approx_p_two_sided(&ranks, w_plus), Method::NormalApprox)
    };
    Ok(TestResult { statistic: w_plus, p_two_sided: p, n_effective, method })
}

/// Mean, maximum, and sample (n−1) standard deviation.
pub fn descriptive(values: &[f64]) -> Result<(f64, f64, f64), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok((mean, best, std))
}

/// Standard normal CDF via the complementary error function.
pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Formats a p-value at three decimals with conventional significance stars
/// (`**` below 0.01, `*` below 0.05).
pub fn format_p_value(p: f64) -> String {
    let stars = if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    };
    format!("{p:.3}{stars}")
}
