//! Logistic-regression fine-tuning on top of a pretrained embedder.

use serde::{Deserialize, Serialize};

use super::embedder::EmbedderArtifact;
use super::ModelInput;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneParams {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for FinetuneParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 500,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArtifact {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Digest of the embedder artifact this classifier was fine-tuned from.
    pub parent: String,
}

impl ClassifierArtifact {
    pub fn decision(&self, features: &[f64]) -> f64 {
        dot(&self.weights, features) + self.bias
    }

    pub fn predict_proba(&self, features: &[f64]) -> f64 {
        sigmoid(self.decision(features))
    }

    pub fn predict(&self, features: &[f64]) -> bool {
        self.predict_proba(features) >= 0.5
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Mean logistic loss with an L2 penalty on the weights (bias excluded).
///
/// `params` is `[w_0 .. w_{k-1}, b]`; labels are `true` for the positive
/// class. Returns `(loss, gradient)`.
pub fn logistic_objective(params: &[f64], xs: &[Vec<f64>], ys: &[bool], l2: f64) -> (f64, Vec<f64>) {
    let k = params.len() - 1;
    let (w, b) = (&params[..k], params[k]);
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; k + 1];
    for (x, &y) in xs.iter().zip(ys) {
        let s = if y { 1.0 } else { -1.0 };
        let z = dot(w, x) + b;
        loss += softplus(-s * z);
        // d/dz softplus(-s z) = -s σ(-s z)
        let g = -s * sigmoid(-s * z);
        for (gi, xi) in grad.iter_mut().zip(x) {
            *gi += g * xi;
        }
        grad[k] += g;
    }
    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    for (gi, wi) in grad.iter_mut().zip(w) {
        *gi += 2.0 * l2 * wi;
    }
    loss += l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, grad)
}

/// Feature vectors for a batch of inputs under `embedder`.
pub fn featurize(embedder: &EmbedderArtifact, inputs: &[&ModelInput]) -> Result<Vec<Vec<f64>>> {
    inputs.iter().map(|i| i.features(embedder)).collect()
}

pub fn finetune_classifier(
    embedder: &EmbedderArtifact,
    examples: &[(ModelInput, bool)],
) -> Result<ClassifierArtifact> {
    finetune_classifier_with(embedder, examples, &FinetuneParams::default())
}

pub fn finetune_classifier_with(
    embedder: &EmbedderArtifact,
    examples: &[(ModelInput, bool)],
    params: &FinetuneParams,
) -> Result<ClassifierArtifact> {
    let positives = examples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::invalid(
            "training set must contain at least one example of each label",
        ));
    }
    let inputs: Vec<&ModelInput> = examples.iter().map(|(x, _)| x).collect();
    let xs = featurize(embedder, &inputs)?;
    let ys: Vec<bool> = examples.iter().map(|(_, y)| *y).collect();
    let mut theta = vec![0.0; embedder.dim + 1];
    for _ in 0..params.iterations {
        let (_, grad) = logistic_objective(&theta, &xs, &ys, params.l2);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= params.learning_rate * g;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("fine-tuning diverged"));
    }
    let bias = theta.pop().unwrap_or_default();
    Ok(ClassifierArtifact {
        weights: theta,
        bias,
        parent: embedder.digest(),
    })
}
