//! Human feedback: ranked candidate outputs, their pairwise expansion, and
//! reward models fitted from the comparisons.

mod reward;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use reward::{
    comparison_diffs, expand_ranking, fit_reward, reward_objective, score, PairwiseComparison, RewardFit,
    RewardFitParams,
};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::governance::{AccessControl, Action, Principal, Resource, ResourceKind};
use crate::registry::Registry;
use crate::store::{json, Store, Table};

pub const REWARD_MEDIA_TYPE: &str = "application/vnd.saturn.reward+json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub feature_vector: Vec<f64>,
}

/// A ranking as submitted. Labeler ids are free-form; by convention
/// automated labelers use a `machine:` prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewRanking {
    pub prompt_id: String,
    pub candidates: Vec<Candidate>,
    /// Candidate indices, best first.
    pub ranking: Vec<usize>,
    pub labeler_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub record_id: String,
    pub prompt_id: String,
    pub candidates: Vec<Candidate>,
    pub ranking: Vec<usize>,
    pub labeler_id: String,
    pub submitted_at: DateTime<Utc>,
    pub comparisons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub reward_model_id: String,
    pub weights: Vec<f64>,
    pub fit_loss: f64,
    pub iterations_used: usize,
    pub comparisons_count: usize,
    pub l2_lambda: f64,
    pub params: RewardFitParams,
    pub prompt_prefix: String,
    pub artifact_digest: String,
    pub created_at: DateTime<Utc>,
}

impl RewardModel {
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        score(&self.weights, features)
    }
}

/// Serialized form stored as a registry blob.
#[derive(Serialize)]
struct RewardArtifact<'a> {
    kind: &'static str,
    weights: &'a [f64],
    l2_lambda: f64,
    comparisons_count: usize,
}

pub fn validate_ranking(r: &NewRanking) -> Result<()> {
    if r.prompt_id.trim().is_empty() {
        return Err(Error::invalid("prompt_id must be nonempty"));
    }
    if r.labeler_id.trim().is_empty() {
        return Err(Error::invalid("labeler_id must be nonempty"));
    }
    let n = r.candidates.len();
    if n < 2 {
        return Err(Error::invalid("a ranking needs at least 2 candidates"));
    }
    let dim = r.candidates[0].feature_vector.len();
    if dim == 0 {
        return Err(Error::invalid("candidate feature vectors are empty"));
    }
    for c in &r.candidates {
        if c.feature_vector.len() != dim {
            return Err(Error::invalid("candidate feature vectors differ in dimension"));
        }
        if c.feature_vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("candidate features must be finite"));
        }
    }
    let ids: BTreeSet<&str> = r.candidates.iter().map(|c| c.candidate_id.as_str()).collect();
    if ids.len() != n {
        return Err(Error::invalid("candidate ids must be unique"));
    }
    let seen: BTreeSet<usize> = r.ranking.iter().copied().collect();
    if r.ranking.len() != n || seen.len() != n || seen.iter().any(|i| *i >= n) {
        return Err(Error::invalid(format!(
            "ranking {:?} is not a permutation of 0..{n}",
            r.ranking
        )));
    }
    Ok(())
}

fn cmp_key(record_id: &str, i: usize) -> String {
    format!("cmp\u{0}{record_id}\u{0}{i:06}")
}

pub struct FeedbackHub {
    store: Arc<Store>,
    registry: Arc<Registry>,
    acl: Arc<AccessControl>,
    clock: Arc<dyn Clock>,
    write: Mutex<()>,
}

impl fmt::Debug for FeedbackHub {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeedbackHub").finish_non_exhaustive()
    }
}

impl FeedbackHub {
    pub fn new(store: Arc<Store>, registry: Arc<Registry>, acl: Arc<AccessControl>, clock: Arc<dyn Clock>) -> Self {
        Self {
            store,
            registry,
            acl,
            clock,
            write: Mutex::new(()),
        }
    }

    /// Stores a ranking and its pairwise comparisons in one transaction.
    pub fn submit_ranking(&self, caller: &Principal, ranking: NewRanking) -> Result<FeedbackRecord> {
        self.acl.require(
            caller,
            Action::Write,
            &Resource::One(ResourceKind::Feedback, ranking.prompt_id.clone()),
        )?;
        validate_ranking(&ranking)?;
        let _guard = self.write.lock();
        let record_id = format!("fb-{:06}", self.store.next_seq("feedback")?);
        let pairs = expand_ranking(&ranking.ranking);
        let record = FeedbackRecord {
            record_id: record_id.clone(),
            prompt_id: ranking.prompt_id,
            candidates: ranking.candidates,
            ranking: ranking.ranking,
            labeler_id: ranking.labeler_id,
            submitted_at: self.clock.now(),
            comparisons: pairs.len(),
        };
        let mut rows = vec![(Table::Feedback, format!("rec\u{0}{record_id}"), json(&record)?)];
        for (i, (w, l)) in pairs.into_iter().enumerate() {
            let c = PairwiseComparison {
                winner_features: record.candidates[w].feature_vector.clone(),
                loser_features: record.candidates[l].feature_vector.clone(),
                record_id: record_id.clone(),
            };
            rows.push((Table::Feedback, cmp_key(&record_id, i), json(&c)?));
        }
        self.store.write_batch(&rows)?;
        Ok(record)
    }

    pub fn records(&self, caller: &Principal) -> Result<Vec<FeedbackRecord>> {
        Ok(self
            .store
            .scan::<serde_json::Value>(Table::Feedback)?
            .into_iter()
            .filter(|(k, _)| k.starts_with("rec\u{0}"))
            .map(|(_, v)| serde_json::from_value::<FeedbackRecord>(v))
            .collect::<std::result::Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|r| self.acl.allows(caller, Action::Read, &Resource::One(ResourceKind::Feedback, r.prompt_id.clone())))
            .collect())
    }

    /// Materialized comparisons of every record whose prompt id starts
    /// with `prompt_prefix`, in submission order.
    pub fn comparisons(&self, caller: &Principal, prompt_prefix: &str) -> Result<Vec<PairwiseComparison>> {
        let records: BTreeSet<String> = self
            .records(caller)?
            .into_iter()
            .filter(|r| r.prompt_id.starts_with(prompt_prefix))
            .map(|r| r.record_id)
            .collect();
        let mut out = Vec::new();
        for (k, v) in self.store.scan_raw(Table::Feedback)? {
            let Some(rest) = k.strip_prefix("cmp\u{0}") else {
                continue;
            };
            let record_id = rest.split('\u{0}').next().unwrap_or_default();
            if records.contains(record_id) {
                out.push(serde_json::from_slice(&v)?);
            }
        }
        Ok(out)
    }

    /// Fits a reward model on the selected comparisons and stores it as a
    /// content-addressed blob with a catalog entry.
    pub fn fit(&self, caller: &Principal, prompt_prefix: &str, params: RewardFitParams) -> Result<RewardModel> {
        self.acl.require(caller, Action::Write, &Resource::AllOf(ResourceKind::Feedback))?;
        let comparisons = self.comparisons(caller, prompt_prefix)?;
        let fit = fit_reward(&comparisons, &params)?;
        let artifact = serde_json::to_vec(&RewardArtifact {
            kind: "reward",
            weights: &fit.weights,
            l2_lambda: fit.l2_lambda,
            comparisons_count: fit.comparisons_count,
        })?;
        let blob = self.registry.store_blob(&artifact, REWARD_MEDIA_TYPE)?;
        let model = RewardModel {
            reward_model_id: format!("rwd-{:06}", self.store.next_seq("reward")?),
            weights: fit.weights,
            fit_loss: fit.fit_loss,
            iterations_used: fit.iterations_used,
            comparisons_count: fit.comparisons_count,
            l2_lambda: fit.l2_lambda,
            params,
            prompt_prefix: prompt_prefix.to_string(),
            artifact_digest: blob.digest,
            created_at: self.clock.now(),
        };
        self.store.put(Table::RewardModels, &model.reward_model_id, &model)?;
        Ok(model)
    }

    pub fn reward_model(&self, caller: &Principal, id: &str) -> Result<RewardModel> {
        self.acl.require(caller, Action::Read, &Resource::AllOf(ResourceKind::Feedback))?;
        self.store
            .get(Table::RewardModels, id)?
            .ok_or_else(|| Error::not_found(format!("reward model {id}")))
    }

    pub fn reward_models(&self, caller: &Principal) -> Result<Vec<RewardModel>> {
        self.acl.require(caller, Action::Read, &Resource::AllOf(ResourceKind::Feedback))?;
        Ok(self
            .store
            .scan::<RewardModel>(Table::RewardModels)?
            .into_iter()
            .map(|(_, m)| m)
            .collect())
    }
}
