//! Drift statistics: population stability index, two-sample
//! Kolmogorov–Smirnov, and equal-frequency binning.

use crate::error::{Error, Result};

pub const PSI_EPSILON: f64 = 1e-6;
/// Two-sample KS coefficient for α = 0.05.
pub const KS_ALPHA_05: f64 = 1.358;

fn smooth(p: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = p.iter().map(|v| v.max(PSI_EPSILON)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("{name} must contain finite nonnegative probabilities")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// `Σ (p_i − q_i)·ln(p_i / q_i)` after flooring each probability at
/// [`PSI_EPSILON`] and renormalizing.
pub fn compute_psi(reference: &[f64], live: &[f64]) -> Result<f64> {
    if reference.len() != live.len() {
        return Err(Error::invalid(format!(
            "histograms have {} and {} bins",
            reference.len(),
            live.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::invalid("histograms are empty"));
    }
    check_distribution(reference, "reference histogram")?;
    check_distribution(live, "live histogram")?;
    let p = smooth(reference);
    let q = smooth(live);
    let psi: f64 = p.iter().zip(&q).map(|(p, q)| (p - q) * (p / q).ln()).sum();
    // every term is ≥ 0 mathematically; clamp rounding noise
    Ok(psi.max(0.0))
}

/// `(D, critical)` where D is the supremum gap between the two empirical
/// CDFs and `critical = 1.358·sqrt((n+m)/(n·m))`.
pub fn compute_ks(reference: &[f64], live: &[f64]) -> Result<(f64, f64)> {
    if reference.is_empty() || live.is_empty() {
        return Err(Error::invalid("KS needs two nonempty samples"));
    }
    if reference.iter().chain(live).any(|v| !v.is_finite()) {
        return Err(Error::invalid("KS samples must be finite"));
    }
    let mut a = reference.to_vec();
    let mut b = live.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok((ks_sorted(&a, &b), ks_critical(a.len(), b.len())))
}

pub fn ks_critical(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    KS_ALPHA_05 * ((n + m) / (n * m)).sqrt()
}

/// KS statistic for two ascending samples.
pub fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        let gap = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(gap);
    }
    d
}

/// Interior edges of `bins` equal-frequency bins over an ascending sample:
/// edge `i` is `sorted[i·n/bins]` for `i` in `1..bins`.
pub fn equal_frequency_edges(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    (1..bins).map(|i| sorted[i * n / bins]).collect()
}

/// Bin of `x`: the number of edges `≤ x`.
pub fn bin_index(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|e| *e <= x)
}

pub fn bin_counts(edges: &[f64], values: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len() + 1];
    for v in values {
        counts[bin_index(edges, *v)] += 1;
    }
    counts
}

pub fn proportions(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts.iter().map(|c| *c as f64 / total as f64).collect()
}
