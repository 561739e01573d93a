use serde::{Deserialize, Serialize};

use super::classifier::ClassifierArtifact;
use super::embedder::EmbedderArtifact;
use super::ModelInput;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub auc: f64,
    pub sample_count: usize,
}

pub fn evaluate(
    classifier: &ClassifierArtifact,
    embedder: &EmbedderArtifact,
    examples: &[(ModelInput, bool)],
) -> Result<EvalMetrics> {
    if examples.is_empty() {
        return Err(Error::invalid("evaluation needs at least one example"));
    }
    let mut scores = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for (input, y) in examples {
        scores.push(classifier.predict_proba(&input.features(embedder)?));
        labels.push(*y);
    }
    Ok(metrics_from_scores(&scores, &labels))
}

/// Accuracy at threshold 0.5 and rank-statistic AUC.
pub fn metrics_from_scores(scores: &[f64], labels: &[bool]) -> EvalMetrics {
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, y)| (**s >= 0.5) == **y)
        .count();
    EvalMetrics {
        accuracy: correct as f64 / scores.len().max(1) as f64,
        auc: auc(scores, labels),
        sample_count: scores.len(),
    }
}

/// Mann-Whitney AUC with tied scores counted as one half. Returns 0.5 when
/// one of the classes is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|y| **y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            if labels[p] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n)
}
