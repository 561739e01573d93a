//! Linear reward model fitted to pairwise comparisons with the pairwise
//! logistic (Bradley–Terry) loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelkit::{sigmoid, softplus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub winner_features: Vec<f64>,
    pub loser_features: Vec<f64>,
    pub record_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardFitParams {
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RewardFitParams {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-3,
            learning_rate: 0.05,
            max_iters: 2000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFit {
    pub weights: Vec<f64>,
    pub fit_loss: f64,
    pub iterations_used: usize,
    pub comparisons_count: usize,
    pub l2_lambda: f64,
}

/// `L(w) = Σ ln(1 + exp(−w·d_i)) + λ‖w‖²` and its gradient, where
/// `d_i = x_win − x_lose`.
pub fn reward_objective(w: &[f64], diffs: &[Vec<f64>], l2: f64) -> (f64, Vec<f64>) {
    let mut loss = l2 * w.iter().map(|v| v * v).sum::<f64>();
    let mut grad: Vec<f64> = w.iter().map(|v| 2.0 * l2 * v).collect();
    for d in diffs {
        let margin: f64 = w.iter().zip(d).map(|(a, b)| a * b).sum();
        loss += softplus(-margin);
        let s = sigmoid(-margin);
        for (g, x) in grad.iter_mut().zip(d) {
            *g -= s * x;
        }
    }
    (loss, grad)
}

/// Differences `winner − loser`, checking that every comparison has the
/// same finite dimension.
pub fn comparison_diffs(comparisons: &[PairwiseComparison]) -> Result<(usize, Vec<Vec<f64>>)> {
    let Some(first) = comparisons.first() else {
        return Err(Error::invalid("no comparisons to fit"));
    };
    let dim = first.winner_features.len();
    if dim == 0 {
        return Err(Error::invalid("comparison features are empty"));
    }
    let mut diffs = Vec::with_capacity(comparisons.len());
    for c in comparisons {
        if c.winner_features.len() != dim || c.loser_features.len() != dim {
            return Err(Error::invalid("comparisons have mixed feature dimensions"));
        }
        if c.winner_features.iter().chain(&c.loser_features).any(|v| !v.is_finite()) {
            return Err(Error::invalid("comparison features must be finite"));
        }
        diffs.push(c.winner_features.iter().zip(&c.loser_features).map(|(a, b)| a - b).collect());
    }
    Ok((dim, diffs))
}

/// Full-batch gradient descent from zero. The step is the learning rate
/// divided by the comparison count, so the rate means the same thing for
/// 5 or 5,000 comparisons; the objective itself is the unnormalized sum.
pub fn fit_reward(comparisons: &[PairwiseComparison], params: &RewardFitParams) -> Result<RewardFit> {
    if !(params.l2_lambda >= 0.0 && params.learning_rate > 0.0 && params.tol >= 0.0) || params.max_iters == 0 {
        return Err(Error::invalid("invalid reward fit hyperparameters"));
    }
    let (dim, diffs) = comparison_diffs(comparisons)?;
    let step = params.learning_rate / diffs.len() as f64;
    let mut w = vec![0.0; dim];
    let mut iterations = 0;
    for _ in 0..params.max_iters {
        let (_, grad) = reward_objective(&w, &diffs, params.l2_lambda);
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < params.tol {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= step * gi;
        }
        iterations += 1;
    }
    let (fit_loss, _) = reward_objective(&w, &diffs, params.l2_lambda);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("reward fit diverged"));
    }
    Ok(RewardFit {
        weights: w,
        fit_loss,
        iterations_used: iterations,
        comparisons_count: diffs.len(),
        l2_lambda: params.l2_lambda,
    })
}

pub fn score(weights: &[f64], features: &[f64]) -> Result<f64> {
    if weights.len() != features.len() {
        return Err(Error::invalid(format!(
            "reward model has {} weights, input has {} features",
            weights.len(),
            features.len()
        )));
    }
    Ok(weights.iter().zip(features).map(|(a, b)| a * b).sum())
}

/// All ordered pairs implied by a best-first ranking: for ranking
/// `[a, b, c]` that is `(a≻b), (a≻c), (b≻c)`.
pub fn expand_ranking(ranking: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(ranking.len() * ranking.len().saturating_sub(1) / 2);
    for (i, w) in ranking.iter().enumerate() {
        for l in &ranking[i + 1..] {
            out.push((*w, *l));
        }
    }
    out
}
