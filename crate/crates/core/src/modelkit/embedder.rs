//! Self-supervised pretraining: windowed PPMI co-occurrence statistics
//! factorized by seeded subspace iteration.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::linalg::{orthonormalize_columns, symmetric_eigen, Dense};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainParams {
    pub dim: usize,
    pub window: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PretrainParams {
    fn default() -> Self {
        Self {
            dim: 8,
            window: 2,
            seed: 0,
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderArtifact {
    /// Vocabulary in index order (sorted).
    pub vocabulary: Vec<String>,
    /// `|V| × dim`, row-major.
    pub matrix: Vec<f64>,
    pub dim: usize,
    pub window: usize,
    pub seed: u64,
    /// Signed Ritz values of the factorization, largest magnitude first.
    pub spectrum: Vec<f64>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl EmbedderArtifact {
    pub fn new(
        vocabulary: Vec<String>,
        matrix: Vec<f64>,
        dim: usize,
        window: usize,
        seed: u64,
        spectrum: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be >= 1"));
        }
        if matrix.len() != vocabulary.len() * dim {
            return Err(Error::invalid("matrix shape does not match vocabulary"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding matrix has non-finite entries"));
        }
        let mut a = Self {
            vocabulary,
            matrix,
            dim,
            window,
            seed,
            spectrum,
            index: BTreeMap::new(),
        };
        a.reindex()?;
        Ok(a)
    }

    pub(crate) fn reindex(&mut self) -> Result<()> {
        self.index = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if self.index.len() != self.vocabulary.len() {
            return Err(Error::invalid("duplicate vocabulary entry"));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn token_vector(&self, token: &str) -> Option<&[f64]> {
        self.token_index(token).map(|i| self.row(i))
    }

    /// Entry `(i, j)` of the rank-k approximation `Q Λ Qᵀ` carried by the
    /// artifact.
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row(i), self.row(j));
        a.iter()
            .zip(b)
            .zip(&self.spectrum)
            .map(|((x, y), l)| x * y * l.signum())
            .sum()
    }

    /// Mean of in-vocabulary token rows; zero vector when nothing is known.
    ///
    /// Rows are weighted by `count / total` and accumulated in vocabulary
    /// order, so a document repeated n times embeds to exactly the same
    /// vector as the document itself.
    pub fn embed_document<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokens {
            if let Some(i) = self.token_index(&t.as_ref().to_lowercase()) {
                *counts.entry(i).or_default() += 1;
            }
        }
        let total: usize = counts.values().sum();
        let mut out = vec![0.0; self.dim];
        if total == 0 {
            return out;
        }
        for (i, c) in counts {
            let weight = c as f64 / total as f64;
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += weight * v;
            }
        }
        out
    }
}

/// Symmetric PPMI matrix over the sorted vocabulary of `corpus`.
///
/// Co-occurrences are counted symmetrically for every ordered pair of
/// positions at distance `1..=window` within a document. Each token has up
/// to `2 * window` neighbours, so the counts are divided by `2 * window`
/// before forming the ratio; independent tokens then score zero.
pub fn ppmi_matrix(corpus: &Corpus, window: usize) -> (Vec<String>, Dense) {
    let vocab: Vec<String> = corpus
        .documents()
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let n = vocab.len();
    let mut pair = Dense::zeros(n, n);
    let mut unigram = vec![0.0f64; n];
    for doc in corpus.documents() {
        let ids: Vec<usize> = doc.iter().map(|t| index[t.as_str()]).collect();
        for (p, &a) in ids.iter().enumerate() {
            unigram[a] += 1.0;
            for &b in ids.iter().skip(p + 1).take(window) {
                pair.data[a * n + b] += 1.0;
                pair.data[b * n + a] += 1.0;
            }
        }
    }
    let total = corpus.total_tokens() as f64;
    let slots = 2.0 * window as f64;
    let mut m = Dense::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let cij = pair.get(i, j);
            if cij > 0.0 {
                let pmi = (cij * total / (slots * unigram[i] * unigram[j])).ln();
                m.set(i, j, pmi.max(0.0));
            }
        }
    }
    (vocab, m)
}

pub fn pretrain_embedder(corpus: &Corpus, k: usize, w: usize, seed: u64) -> Result<EmbedderArtifact> {
    pretrain_embedder_with(
        corpus,
        &PretrainParams {
            dim: k,
            window: w,
            seed,
            ..PretrainParams::default()
        },
    )
}

pub fn pretrain_embedder_with(corpus: &Corpus, params: &PretrainParams) -> Result<EmbedderArtifact> {
    if corpus.is_empty() {
        return Err(Error::invalid("corpus is empty"));
    }
    if params.dim == 0 || params.window == 0 {
        return Err(Error::invalid("dimension and window must be >= 1"));
    }
    let (vocab, m) = ppmi_matrix(corpus, params.window);
    let n = vocab.len();
    let k = params.dim;
    if k > n {
        return Err(Error::invalid(format!(
            "dimension {k} exceeds vocabulary size {n}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut q = Dense::zeros(n, k);
    for v in q.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    orthonormalize_columns(&mut q, &mut rng);

    let mut ritz = m.matmul(&q);
    let mut projected = q.t_matmul(&ritz);
    let mut prev_norm = projected.frobenius();
    for _ in 1..params.max_iters.max(1) {
        let mut next = ritz;
        orthonormalize_columns(&mut next, &mut rng);
        q = next;
        ritz = m.matmul(&q);
        projected = q.t_matmul(&ritz);
        let norm = projected.frobenius();
        let change = (norm - prev_norm).abs() / prev_norm.max(f64::MIN_POSITIVE);
        prev_norm = norm;
        if change < params.tol {
            break;
        }
    }

    // Rayleigh-Ritz: rotate the converged basis onto eigenvectors of the
    // projected matrix, largest |λ| first.
    let (vals, vecs) = symmetric_eigen(&projected);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()).then(a.cmp(&b)));
    let basis = q.matmul(&vecs);
    let mut matrix = vec![0.0; n * k];
    for r in 0..n {
        for (c, &src) in order.iter().enumerate() {
            matrix[r * k + c] = basis.get(r, src) * vals[src].abs().sqrt();
        }
    }
    let spectrum = order.iter().map(|&i| vals[i]).collect();
    EmbedderArtifact::new(vocab, matrix, k, params.window, params.seed, spectrum)
}
