//! Post-processing bias mitigation: per-group decision thresholds chosen on
//! the grid {0.00, 0.01, …, 1.00}.
//!
//! The search is exact. Among threshold vectors whose overall accuracy stays
//! within the allowed drop from the 0.5 baseline it minimizes, in order:
//! demographic parity difference, total grid distance from 0.5, and the
//! threshold vector itself (lexicographic in group-name order).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::fairness::{check_lengths, compute_fairness_scored, FairnessReport, Ratio};
use crate::error::{Error, Result};

pub const GRID_STEPS: u32 = 100;
pub const BASELINE_STEP: u32 = 50;

/// Threshold value of grid point `step`.
pub fn grid_threshold(step: u32) -> f64 {
    step as f64 / GRID_STEPS as f64
}

/// Smallest number of correct predictions that satisfies
/// `accuracy >= baseline_accuracy - max_drop`.
pub fn min_correct(baseline_correct: u64, n: u64, max_drop: f64) -> u64 {
    let bound = baseline_correct as f64 - max_drop * n as f64 - 1e-9;
    bound.ceil().max(0.0) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationOutcome {
    pub thresholds: BTreeMap<String, f64>,
    pub report: FairnessReport,
    /// No threshold vector within the accuracy budget lowers the parity gap;
    /// the baseline thresholds are returned.
    pub infeasible: bool,
    pub baseline_accuracy: f64,
    pub accuracy: f64,
    pub baseline_dpd: f64,
}

struct GroupOption {
    step: u32,
    rate: Ratio,
    correct: u64,
}

pub fn mitigate_by_threshold<S: AsRef<str>>(
    scores: &[f64],
    labels: &[bool],
    groups: &[S],
    max_accuracy_drop: f64,
) -> Result<MitigationOutcome> {
    check_lengths(scores.len(), labels.len(), groups.len())?;
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::invalid("scores must lie in [0, 1]"));
    }
    if max_accuracy_drop.is_nan() || max_accuracy_drop < 0.0 {
        return Err(Error::invalid("max_accuracy_drop must be >= 0"));
    }
    let names: Vec<String> = groups
        .iter()
        .map(|g| g.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if names.len() < 2 {
        return Err(Error::invalid("fairness needs at least two distinct groups"));
    }
    let gidx: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let mut members: Vec<Vec<(f64, bool)>> = vec![Vec::new(); names.len()];
    for ((s, y), g) in scores.iter().zip(labels).zip(groups) {
        members[gidx[g.as_ref()]].push((*s, *y));
    }

    let options: Vec<Vec<GroupOption>> = members
        .iter()
        .map(|m| {
            (0..=GRID_STEPS)
                .map(|step| {
                    let t = grid_threshold(step);
                    let pos = m.iter().filter(|(s, _)| *s >= t).count() as u64;
                    let correct = m.iter().filter(|(s, y)| (*s >= t) == *y).count() as u64;
                    GroupOption {
                        step,
                        rate: Ratio::new(pos, m.len() as u64),
                        correct,
                    }
                })
                .collect()
        })
        .collect();

    let n = scores.len() as u64;
    let base = |g: usize| &options[g][BASELINE_STEP as usize];
    let baseline_correct: u64 = (0..names.len()).map(|g| base(g).correct).sum();
    let need = min_correct(baseline_correct, n, max_accuracy_drop);
    let base_rates: Vec<Ratio> = (0..names.len()).map(|g| base(g).rate).collect();
    let baseline_dpd = dpd_of(&base_rates);

    let mut candidates: Vec<Ratio> = options.iter().flatten().map(|o| o.rate).collect();
    candidates.sort();
    candidates.dedup();

    let in_window = |r: Ratio, lo: Ratio, width: Ratio| r >= lo && r.abs_diff(lo) <= width;

    // Narrowest feasible rate window.
    let mut best_width: Option<Ratio> = None;
    for (i, &lo) in candidates.iter().enumerate() {
        for &hi in &candidates[i..] {
            let width = hi.abs_diff(lo);
            if best_width.is_some_and(|b| width >= b) {
                break;
            }
            let mut total = 0u64;
            let mut ok = true;
            for opts in &options {
                match opts.iter().filter(|o| in_window(o.rate, lo, width)).map(|o| o.correct).max() {
                    Some(c) => total += c,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok && total >= need {
                best_width = Some(width);
                break;
            }
        }
    }
    // The baseline is always feasible, so a window exists.
    let width = best_width.expect("baseline thresholds are feasible");

    let choose_baseline = baseline_dpd > Ratio::zero() && width >= baseline_dpd;
    let steps: Vec<u32> = if choose_baseline {
        vec![BASELINE_STEP; names.len()]
    } else {
        let mut best: Option<(u32, Vec<u32>)> = None;
        for &lo in &candidates {
            if let Some(found) = cheapest_in_window(&options, need, |r| in_window(r, lo, width)) {
                if best.as_ref().is_none_or(|b| found < *b) {
                    best = Some(found);
                }
            }
        }
        best.expect("narrowest window has a solution").1
    };

    let thresholds: BTreeMap<String, f64> = names
        .iter()
        .zip(&steps)
        .map(|(g, s)| (g.clone(), grid_threshold(*s)))
        .collect();
    let correct: u64 = steps.iter().enumerate().map(|(g, s)| options[g][*s as usize].correct).sum();
    let report = compute_fairness_scored(scores, labels, groups, &thresholds)?;
    Ok(MitigationOutcome {
        thresholds,
        report,
        infeasible: choose_baseline,
        baseline_accuracy: baseline_correct as f64 / n as f64,
        accuracy: correct as f64 / n as f64,
        baseline_dpd: baseline_dpd.to_f64(),
    })
}

fn dpd_of(rates: &[Ratio]) -> Ratio {
    let lo = rates.iter().min().copied().unwrap_or_else(Ratio::zero);
    let hi = rates.iter().max().copied().unwrap_or_else(Ratio::zero);
    hi.abs_diff(lo)
}

/// Minimum `(Σ|step − 50|, steps)` over choices whose rates pass `admit`
/// and whose correct counts sum to at least `need`. Backward DP over groups
/// with the remaining requirement as state.
fn cheapest_in_window(
    options: &[Vec<GroupOption>],
    need: u64,
    admit: impl Fn(Ratio) -> bool,
) -> Option<(u32, Vec<u32>)> {
    let g_count = options.len();
    let need = need as usize;
    // best[r] for the suffix starting at the current group
    let mut best: Vec<Option<(u32, Vec<u32>)>> = vec![None; need + 1];
    best[0] = Some((0, Vec::new()));
    for g in (0..g_count).rev() {
        let mut next: Vec<Option<(u32, Vec<u32>)>> = vec![None; need + 1];
        for (r, slot) in next.iter_mut().enumerate() {
            for o in options[g].iter().filter(|o| admit(o.rate)) {
                let rest = r.saturating_sub(o.correct as usize);
                if let Some((d, suffix)) = &best[rest] {
                    let dist = d + o.step.abs_diff(BASELINE_STEP);
                    let mut v = Vec::with_capacity(suffix.len() + 1);
                    v.push(o.step);
                    v.extend_from_slice(suffix);
                    let cand = (dist, v);
                    if slot.as_ref().is_none_or(|s| cand < *s) {
                        *slot = Some(cand);
                    }
                }
            }
        }
        best = next;
    }
    best[need].take()
}
