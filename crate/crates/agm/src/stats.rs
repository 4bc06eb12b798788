//! Paired-difference testing for split results.

use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Two-sided p-value; 1.0 when fewer than five nonzero differences exist.
    pub p_value: f64,
    /// The smaller of the positive and negative rank sums.
    pub statistic: f64,
    /// Number of nonzero differences that entered the test.
    pub n_effective: usize,
}

/// Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped, tied magnitudes get average ranks. The null
/// distribution is exact (subset enumeration by dynamic programming) when no
/// ties are present and `n <= 25`, otherwise a normal approximation with tie
/// correction and continuity correction.
pub fn wilcoxon_signed_rank(xs: &[f64], ys: &[f64]) -> WilcoxonResult {
    assert_eq!(xs.len(), ys.len(), "paired samples must have equal length");
    let diffs: Vec<f64> = xs
        .iter()
        .zip(ys.iter())
        .map(|(a, b)| a - b)
        .filter(|d| d.abs() > 1e-12)
        .collect();
    let n = diffs.len();
    if n < 5 {
        return WilcoxonResult {
            p_value: 1.0,
            statistic: 0.0,
            n_effective: n,
        };
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks = vec![0.0; n];
    let mut has_ties = false;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && (diffs[order[j + 1]].abs() - diffs[order[i]].abs()).abs() <= 1e-12 {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        if j > i {
            has_ties = true;
        }
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }

    let w_plus: f64 = diffs
        .iter()
        .zip(ranks.iter())
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = n as f64 * (n as f64 + 1.0) / 2.0;
    let w_minus = total - w_plus;
    let w = w_plus.min(w_minus);

    let p_value = if !has_ties && n <= 25 {
        exact_two_sided(n, w)
    } else {
        normal_two_sided(n, w, &ranks)
    };

    WilcoxonResult {
        p_value: p_value.min(1.0),
        statistic: w,
        n_effective: n,
    }
}

/// Exact null CDF of W+ over the 2^n equiprobable sign assignments.
fn exact_two_sided(n: usize, w: f64) -> f64 {
    let max_sum = n * (n + 1) / 2;
    let mut counts = vec![0.0f64; max_sum + 1];
    counts[0] = 1.0;
    for rank in 1..=n {
        for s in (rank..=max_sum).rev() {
            counts[s] += counts[s - rank];
        }
    }
    let total: f64 = 2.0f64.powi(n as i32);
    let w_floor = w.floor() as usize;
    let cdf: f64 = counts[..=w_floor.min(max_sum)].iter().sum::<f64>() / total;
    2.0 * cdf
}

fn normal_two_sided(n: usize, w: f64, ranks: &[f64]) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    // Tie correction from the multiplicity of each average rank.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && (sorted[j + 1] - sorted[i]).abs() <= 1e-12 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w - mean + 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * normal.cdf(z)
}
