//! Group fairness metrics over binary predictions.
//!
//! Rates are kept as exact integer ratios until the final division so that
//! gap metrics on small tables are correctly rounded (3/5 − 1/5 is 0.4, not
//! 0.39999999999999997).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative rational `num / den`, `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        debug_assert!(den > 0);
        Self { num, den }
    }

    pub fn zero() -> Self {
        Self { num: 0, den: 1 }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `|self − other|` as an exact ratio.
    pub fn abs_diff(self, other: Ratio) -> Ratio {
        let a = self.num as u128 * other.den as u128;
        let b = other.num as u128 * self.den as u128;
        let num = a.abs_diff(b);
        let den = self.den as u128 * other.den as u128;
        reduce(num, den)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn reduce(num: u128, den: u128) -> Ratio {
    let g = gcd(num, den).max(1);
    Ratio {
        num: (num / g) as u64,
        den: (den / g) as u64,
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub group_rates: BTreeMap<String, f64>,
    pub group_tpr: BTreeMap<String, f64>,
    pub group_fpr: BTreeMap<String, f64>,
    pub group_counts: BTreeMap<String, usize>,
    /// Demographic parity difference.
    pub dpd: f64,
    /// Equalized odds difference.
    pub eod: f64,
    /// Disparate impact ratio.
    pub dir: f64,
    pub thresholds_used: BTreeMap<String, f64>,
    /// Groups lacking positives or negatives; their TPR / FPR is reported as 0.
    pub degenerate_groups: Vec<String>,
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    n: u64,
    predicted_pos: u64,
    pos: u64,
    neg: u64,
    tp: u64,
    fp: u64,
}

fn ratio_or_zero(num: u64, den: u64) -> Ratio {
    if den == 0 {
        Ratio::zero()
    } else {
        Ratio::new(num, den)
    }
}

fn spread(values: impl Iterator<Item = Ratio>) -> Ratio {
    let v: Vec<Ratio> = values.collect();
    match (v.iter().min(), v.iter().max()) {
        (Some(lo), Some(hi)) => hi.abs_diff(*lo),
        _ => Ratio::zero(),
    }
}

pub(crate) fn check_lengths(n: usize, labels: usize, groups: usize) -> Result<()> {
    if labels != n || groups != n {
        return Err(Error::invalid(format!(
            "length mismatch: {n} predictions, {labels} labels, {groups} groups"
        )));
    }
    Ok(())
}

pub fn compute_fairness<S: AsRef<str>>(
    predictions: &[bool],
    labels: &[bool],
    groups: &[S],
) -> Result<FairnessReport> {
    check_lengths(predictions.len(), labels.len(), groups.len())?;
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    for ((&pred, &y), g) in predictions.iter().zip(labels).zip(groups) {
        let c = counts.entry(g.as_ref().to_string()).or_default();
        c.n += 1;
        c.predicted_pos += pred as u64;
        if y {
            c.pos += 1;
            c.tp += pred as u64;
        } else {
            c.neg += 1;
            c.fp += pred as u64;
        }
    }
    if counts.len() < 2 {
        return Err(Error::invalid("fairness needs at least two distinct groups"));
    }

    let rates: BTreeMap<&String, Ratio> = counts
        .iter()
        .map(|(g, c)| (g, Ratio::new(c.predicted_pos, c.n)))
        .collect();
    let tpr: BTreeMap<&String, Ratio> = counts.iter().map(|(g, c)| (g, ratio_or_zero(c.tp, c.pos))).collect();
    let fpr: BTreeMap<&String, Ratio> = counts.iter().map(|(g, c)| (g, ratio_or_zero(c.fp, c.neg))).collect();

    let dpd = spread(rates.values().copied());
    let eod = spread(tpr.values().copied()).max(spread(fpr.values().copied()));
    let lo = rates.values().min().copied().unwrap_or_else(Ratio::zero);
    let hi = rates.values().max().copied().unwrap_or_else(Ratio::zero);
    let dir = if hi.num == 0 {
        1.0
    } else {
        // (lo.num / lo.den) / (hi.num / hi.den)
        let num = lo.num as u128 * hi.den as u128;
        let den = lo.den as u128 * hi.num as u128;
        let r = reduce(num, den);
        r.to_f64()
    };

    let to_f64 = |m: &BTreeMap<&String, Ratio>| m.iter().map(|(g, r)| ((*g).clone(), r.to_f64())).collect();
    Ok(FairnessReport {
        group_rates: to_f64(&rates),
        group_tpr: to_f64(&tpr),
        group_fpr: to_f64(&fpr),
        group_counts: counts.iter().map(|(g, c)| (g.clone(), c.n as usize)).collect(),
        dpd: dpd.to_f64(),
        eod: eod.to_f64(),
        dir,
        thresholds_used: BTreeMap::new(),
        degenerate_groups: counts
            .iter()
            .filter(|(_, c)| c.pos == 0 || c.neg == 0)
            .map(|(g, _)| g.clone())
            .collect(),
    })
}

/// Fairness of `score >= threshold[group]` predictions.
pub fn compute_fairness_scored<S: AsRef<str>>(
    scores: &[f64],
    labels: &[bool],
    groups: &[S],
    thresholds: &BTreeMap<String, f64>,
) -> Result<FairnessReport> {
    check_lengths(scores.len(), labels.len(), groups.len())?;
    let mut preds = Vec::with_capacity(scores.len());
    for (s, g) in scores.iter().zip(groups) {
        let t = thresholds.get(g.as_ref()).copied().unwrap_or(0.5);
        preds.push(*s >= t);
    }
    let mut report = compute_fairness(&preds, labels, groups)?;
    let present: BTreeSet<&str> = groups.iter().map(AsRef::as_ref).collect();
    report.thresholds_used = present
        .into_iter()
        .map(|g| (g.to_string(), thresholds.get(g).copied().unwrap_or(0.5)))
        .collect();
    Ok(report)
}
