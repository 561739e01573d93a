//! Deterministic toy trainers: a PPMI embedder standing in for a pretrained
//! foundation model, and a logistic-regression head fine-tuned on top of it.

mod classifier;
mod corpus;
pub mod dataset;
mod embedder;
mod eval;
pub mod linalg;

use serde::{Deserialize, Serialize};

pub use classifier::{
    finetune_classifier, finetune_classifier_with, logistic_objective, sigmoid, softplus,
    ClassifierArtifact, FinetuneParams,
};
pub use corpus::{tokenize, Corpus};
pub use dataset::LabeledExample;
pub use embedder::{ppmi_matrix, pretrain_embedder, pretrain_embedder_with, EmbedderArtifact, PretrainParams};
pub use eval::{auc, evaluate, metrics_from_scores, EvalMetrics};

use crate::error::{Error, Result};
use crate::registry::sha256_hex;

pub const EMBEDDER_MEDIA_TYPE: &str = "application/vnd.saturn.embedder+json";
pub const CLASSIFIER_MEDIA_TYPE: &str = "application/vnd.saturn.classifier+json";

/// What a model consumes: raw tokens (pooled through the embedder) or a
/// precomputed embedding-space feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelInput {
    Tokens(Vec<String>),
    Features(Vec<f64>),
}

impl ModelInput {
    pub fn tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ModelInput::Tokens(tokens.into_iter().map(Into::into).collect())
    }

    pub fn features(&self, embedder: &EmbedderArtifact) -> Result<Vec<f64>> {
        match self {
            ModelInput::Tokens(t) => Ok(embedder.embed_document(t)),
            ModelInput::Features(f) => {
                if f.len() != embedder.dim {
                    return Err(Error::invalid(format!(
                        "feature vector has length {}, model expects {}",
                        f.len(),
                        embedder.dim
                    )));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("feature vector has non-finite values"));
                }
                Ok(f.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Artifact {
    Embedder(EmbedderArtifact),
    Classifier(ClassifierArtifact),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ArtifactRef<'a> {
    Embedder(&'a EmbedderArtifact),
    Classifier(&'a ClassifierArtifact),
}

impl Artifact {
    pub fn media_type(&self) -> &'static str {
        match self {
            Artifact::Embedder(_) => EMBEDDER_MEDIA_TYPE,
            Artifact::Classifier(_) => CLASSIFIER_MEDIA_TYPE,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Artifact::Embedder(e) => e.to_bytes(),
            Artifact::Classifier(c) => c.to_bytes(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut a: Artifact = serde_json::from_slice(bytes)
            .map_err(|e| Error::invalid(format!("not a model artifact: {e}")))?;
        if let Artifact::Embedder(e) = &mut a {
            e.reindex()?;
            if e.matrix.len() != e.vocabulary.len() * e.dim {
                return Err(Error::invalid("embedder matrix shape mismatch"));
            }
        }
        Ok(a)
    }
}

impl EmbedderArtifact {
    /// Canonical blob encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&ArtifactRef::Embedder(self)).expect("artifact serializes")
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

impl ClassifierArtifact {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&ArtifactRef::Classifier(self)).expect("artifact serializes")
    }
}
