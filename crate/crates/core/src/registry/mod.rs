//! The model zoo: content-addressed artifacts, model and version catalog,
//! lifecycle state machine, validation metadata, lineage and audit trail.

mod blob;
mod lifecycle;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

pub use blob::{sha256_hex, validate_digest, ArtifactBlob, BlobStore, EMPTY_DIGEST};
pub use lifecycle::LifecycleStage;

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::governance::{AccessControl, Action, FairnessReport, Grant, Principal, Resource, ResourceKind, Role};
use crate::modelkit::EvalMetrics;
use crate::store::{json, seq_key, Store, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Speech,
    Tabular,
    Timeseries,
    Multimodal,
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::invalid(format!("unknown modality {s:?}")))
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("modality serializes");
        f.write_str(v.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub name: String,
    pub modality: Modality,
    pub owner: Principal,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub metrics: EvalMetrics,
    pub fairness: Option<FairnessReport>,
    pub passed: bool,
    pub gate_config_digest: String,
    pub evaluated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub version_id: String,
    pub model_id: String,
    pub parent_version: Option<String>,
    pub stage: LifecycleStage,
    pub artifact_digest: String,
    pub validation: Option<ValidationReport>,
    /// Free-text usage restrictions; stored, not enforced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage_policy: Option<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuditAction {
    VersionCreated {
        model_id: String,
        stage: LifecycleStage,
        artifact_digest: String,
        parent_version: Option<String>,
    },
    StageTransition {
        from: LifecycleStage,
        to: LifecycleStage,
    },
    EndpointBound {
        version_id: String,
    },
    EndpointRebound {
        from_version: String,
        to_version: String,
    },
    EndpointStatus {
        status: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    /// Version id or endpoint id the action applies to.
    pub subject: String,
    pub action: AuditAction,
    pub actor: Principal,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewVersion {
    pub model_id: String,
    pub artifact_digest: String,
    #[serde(default)]
    pub parent_version: Option<String>,
    pub stage: LifecycleStage,
    #[serde(default)]
    pub usage_policy: Option<String>,
}

#[derive(Default)]
struct Catalog {
    models: BTreeMap<String, ModelRecord>,
    versions: BTreeMap<String, ModelVersion>,
    blobs: BTreeMap<String, ArtifactBlob>,
    audit: Vec<AuditRecord>,
}

pub struct Registry {
    store: Arc<Store>,
    blobs: BlobStore,
    acl: Arc<AccessControl>,
    clock: Arc<dyn Clock>,
    state: RwLock<Catalog>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").finish_non_exhaustive()
    }
}

impl Registry {
    pub fn open(
        store: Arc<Store>,
        blobs: BlobStore,
        acl: Arc<AccessControl>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        let mut cat = Catalog::default();
        for (_, m) in store.scan::<ModelRecord>(Table::Models)? {
            cat.models.insert(m.model_id.clone(), m);
        }
        for (_, v) in store.scan::<ModelVersion>(Table::Versions)? {
            cat.versions.insert(v.version_id.clone(), v);
        }
        for (_, b) in store.scan::<ArtifactBlob>(Table::Blobs)? {
            cat.blobs.insert(b.digest.clone(), b);
        }
        cat.audit = store.scan::<AuditRecord>(Table::Audit)?.into_iter().map(|(_, a)| a).collect();
        Ok(Self {
            store,
            blobs,
            acl,
            clock,
            state: RwLock::new(cat),
        })
    }

    pub fn acl(&self) -> &Arc<AccessControl> {
        &self.acl
    }

    // ---- models -------------------------------------------------------

    pub fn register_model(&self, caller: &Principal, name: &str, modality: Modality) -> Result<ModelRecord> {
        self.acl.require(caller, Action::Write, &Resource::AllOf(ResourceKind::Model))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::invalid("model name must be nonempty"));
        }
        let mut cat = self.state.write();
        if cat.models.values().any(|m| &m.owner == caller && m.name == name) {
            return Err(Error::Conflict(format!("{caller} already owns a model named {name:?}")));
        }
        let record = ModelRecord {
            model_id: format!("mdl-{:06}", self.store.next_seq("model")?),
            name: name.to_string(),
            modality,
            owner: caller.clone(),
            created_at: self.clock.now(),
        };
        self.store.put(Table::Models, &record.model_id, &record)?;
        cat.models.insert(record.model_id.clone(), record.clone());
        drop(cat);
        if !caller.is_system() {
            self.acl.grant(Grant {
                principal: caller.clone(),
                role: Role::Admin,
                resource: Resource::model(&record.model_id),
            })?;
        }
        Ok(record)
    }

    pub fn get_model(&self, caller: &Principal, model_id: &str) -> Result<ModelRecord> {
        let m = self
            .state
            .read()
            .models
            .get(model_id)
            .cloned()
            .ok_or_else(|| Error::not_found(format!("model {model_id}")))?;
        self.acl.require(caller, Action::Read, &Resource::model(model_id))?;
        Ok(m)
    }

    /// Models the caller may read, in id order.
    pub fn list_models(&self, caller: &Principal) -> Vec<ModelRecord> {
        self.state
            .read()
            .models
            .values()
            .filter(|m| self.acl.allows(caller, Action::Read, &Resource::model(&m.model_id)))
            .cloned()
            .collect()
    }

    // ---- blobs --------------------------------------------------------

    pub fn put_blob(&self, caller: &Principal, bytes: &[u8], media_type: &str) -> Result<ArtifactBlob> {
        let may_write = self.acl.allows(caller, Action::Write, &Resource::AllOf(ResourceKind::Model))
            || self
                .state
                .read()
                .models
                .keys()
                .any(|id| self.acl.allows(caller, Action::Write, &Resource::model(id)));
        if !may_write {
            self.acl.require(caller, Action::Write, &Resource::AllOf(ResourceKind::Model))?;
        }
        self.store_blob(bytes, media_type)
    }

    /// Stores a blob without an access check (platform-internal callers).
    pub(crate) fn store_blob(&self, bytes: &[u8], media_type: &str) -> Result<ArtifactBlob> {
        let digest = self.blobs.put(bytes)?;
        if let Some(b) = self.state.read().blobs.get(&digest) {
            return Ok(b.clone());
        }
        let meta = ArtifactBlob {
            digest: digest.clone(),
            size_bytes: bytes.len() as u64,
            media_type: if media_type.is_empty() {
                "application/octet-stream".to_string()
            } else {
                media_type.to_string()
            },
        };
        let mut cat = self.state.write();
        if let Some(b) = cat.blobs.get(&digest) {
            return Ok(b.clone());
        }
        self.store.put(Table::Blobs, &digest, &meta)?;
        cat.blobs.insert(digest, meta.clone());
        Ok(meta)
    }

    pub fn get_blob(&self, caller: &Principal, digest: &str) -> Result<(ArtifactBlob, Vec<u8>)> {
        validate_digest(digest)?;
        let meta = self
            .blob_meta(digest)
            .ok_or_else(|| Error::not_found(format!("blob {digest}")))?;
        let readable = self.acl.allows(caller, Action::Read, &Resource::AllOf(ResourceKind::Model))
            || self
                .state
                .read()
                .versions
                .values()
                .filter(|v| v.artifact_digest == digest)
                .any(|v| self.acl.allows(caller, Action::Read, &Resource::model(&v.model_id)));
        if !readable {
            self.acl.require(caller, Action::Read, &Resource::AllOf(ResourceKind::Model))?;
        }
        Ok((meta, self.blobs.get(digest)?))
    }

    /// Reads and verifies blob content without an access check.
    pub(crate) fn read_blob(&self, digest: &str) -> Result<Vec<u8>> {
        self.blobs.get(digest)
    }

    pub fn blob_meta(&self, digest: &str) -> Option<ArtifactBlob> {
        self.state.read().blobs.get(digest).cloned()
    }

    pub fn blob_count(&self) -> usize {
        self.state.read().blobs.len()
    }

    pub fn blob_store(&self) -> &BlobStore {
        &self.blobs
    }

    // ---- versions -----------------------------------------------------

    pub fn create_version(&self, caller: &Principal, req: NewVersion) -> Result<ModelVersion> {
        self.create_version_inner(caller, req, None)
    }

    /// Like [`Registry::create_version`], but a repeated call with the same
    /// `key` returns the version created by the first call.
    pub fn create_version_keyed(&self, caller: &Principal, req: NewVersion, key: &str) -> Result<ModelVersion> {
        self.create_version_inner(caller, req, Some(key))
    }

    fn create_version_inner(&self, caller: &Principal, req: NewVersion, key: Option<&str>) -> Result<ModelVersion> {
        self.acl.require(caller, Action::Write, &Resource::model(&req.model_id))?;
        let idem_key = key.map(|k| format!("idem/version/{k}"));
        if !req.stage.is_initial() {
            return Err(Error::invalid("a version must start in S1_PRETRAINING or S2_FINE_TUNING"));
        }
        if req.stage == LifecycleStage::FineTuning && req.parent_version.is_none() {
            return Err(Error::invalid("a fine-tuned version requires a parent_version"));
        }
        validate_digest(&req.artifact_digest)?;
        let mut cat = self.state.write();
        if let Some(k) = &idem_key {
            if let Some(id) = self.store.get::<String>(Table::Meta, k)? {
                return cat
                    .versions
                    .get(&id)
                    .cloned()
                    .ok_or_else(|| Error::Storage(format!("idempotency key points at missing version {id}")));
            }
        }
        if !cat.models.contains_key(&req.model_id) {
            return Err(Error::not_found(format!("model {}", req.model_id)));
        }
        if !cat.blobs.contains_key(&req.artifact_digest) || !self.blobs.contains(&req.artifact_digest) {
            return Err(Error::not_found(format!("blob {}", req.artifact_digest)));
        }
        if let Some(p) = &req.parent_version {
            if !cat.versions.contains_key(p) {
                return Err(Error::not_found(format!("parent version {p}")));
            }
        }
        let version = ModelVersion {
            version_id: format!("ver-{:06}", self.store.next_seq("version")?),
            model_id: req.model_id.clone(),
            parent_version: req.parent_version.clone(),
            stage: req.stage,
            artifact_digest: req.artifact_digest.clone(),
            validation: None,
            usage_policy: req.usage_policy,
            created_at: self.clock.now(),
        };
        let audit = self.audit_record(
            &version.version_id,
            AuditAction::VersionCreated {
                model_id: version.model_id.clone(),
                stage: version.stage,
                artifact_digest: version.artifact_digest.clone(),
                parent_version: version.parent_version.clone(),
            },
            caller,
        )?;
        let mut rows = vec![
            (Table::Versions, version.version_id.clone(), json(&version)?),
            (Table::Audit, seq_key(audit.seq), json(&audit)?),
        ];
        if let Some(k) = idem_key {
            rows.push((Table::Meta, k, json(&version.version_id)?));
        }
        self.store.write_batch(&rows)?;
        cat.versions.insert(version.version_id.clone(), version.clone());
        cat.audit.push(audit);
        Ok(version)
    }

    /// Moves a version along the lifecycle relation. Release (S4) requires
    /// a passing validation report, either supplied here or already
    /// attached. A report, once attached, is immutable.
    pub fn transition_stage(
        &self,
        caller: &Principal,
        version_id: &str,
        to: LifecycleStage,
        report: Option<ValidationReport>,
    ) -> Result<ModelVersion> {
        let model_id = self.version_unchecked(version_id)?.model_id;
        self.acl.require(caller, Action::Write, &Resource::model(&model_id))?;

        let mut cat = self.state.write();
        let current = cat
            .versions
            .get(version_id)
            .cloned()
            .ok_or_else(|| Error::not_found(format!("version {version_id}")))?;
        let from = current.stage;
        if !from.can_transition_to(to) {
            return Err(Error::InvalidTransition { from, to });
        }
        if from.is_initial() && !self.blobs.contains(&current.artifact_digest) {
            return Err(Error::not_found(format!("blob {}", current.artifact_digest)));
        }
        let attached = match (&current.validation, report) {
            (Some(existing), Some(new)) if *existing != new => {
                return Err(Error::Conflict(format!(
                    "version {version_id} already has a validation report"
                )))
            }
            (Some(existing), _) => Some(existing.clone()),
            (None, new) => new,
        };
        if to == LifecycleStage::Released {
            match &attached {
                Some(r) if r.passed => {}
                Some(_) => return Err(Error::GateFailed("validation report did not pass".into())),
                None => return Err(Error::GateFailed("release requires a validation report".into())),
            }
        }
        let mut updated = current;
        updated.stage = to;
        updated.validation = attached;
        let audit = self.audit_record(version_id, AuditAction::StageTransition { from, to }, caller)?;
        self.store.write_batch(&[
            (Table::Versions, updated.version_id.clone(), json(&updated)?),
            (Table::Audit, seq_key(audit.seq), json(&audit)?),
        ])?;
        cat.versions.insert(updated.version_id.clone(), updated.clone());
        cat.audit.push(audit);
        Ok(updated)
    }

    pub fn get_version(&self, caller: &Principal, version_id: &str) -> Result<ModelVersion> {
        let v = self.version_unchecked(version_id)?;
        self.acl.require(caller, Action::Read, &Resource::model(&v.model_id))?;
        Ok(v)
    }

    pub(crate) fn version_unchecked(&self, version_id: &str) -> Result<ModelVersion> {
        self.state
            .read()
            .versions
            .get(version_id)
            .cloned()
            .ok_or_else(|| Error::not_found(format!("version {version_id}")))
    }

    pub fn list_versions(&self, caller: &Principal, model_id: &str) -> Result<Vec<ModelVersion>> {
        if !self.state.read().models.contains_key(model_id) {
            return Err(Error::not_found(format!("model {model_id}")));
        }
        self.acl.require(caller, Action::Read, &Resource::model(model_id))?;
        Ok(self
            .state
            .read()
            .versions
            .values()
            .filter(|v| v.model_id == model_id)
            .cloned()
            .collect())
    }

    /// Ancestor chain, root first, ending with `version_id` itself.
    pub fn lineage(&self, caller: &Principal, version_id: &str) -> Result<Vec<ModelVersion>> {
        let cat = self.state.read();
        let mut chain = Vec::new();
        let mut cursor = Some(version_id.to_string());
        while let Some(id) = cursor {
            let v = cat
                .versions
                .get(&id)
                .ok_or_else(|| Error::not_found(format!("version {id}")))?;
            cursor = v.parent_version.clone();
            chain.push(v.clone());
        }
        drop(cat);
        for v in &chain {
            self.acl.require(caller, Action::Read, &Resource::model(&v.model_id))?;
        }
        chain.reverse();
        Ok(chain)
    }

    /// Every version, in id order (internal consistency checks).
    pub fn all_versions(&self) -> Vec<ModelVersion> {
        self.state.read().versions.values().cloned().collect()
    }

    // ---- audit --------------------------------------------------------

    fn audit_record(&self, subject: &str, action: AuditAction, actor: &Principal) -> Result<AuditRecord> {
        Ok(AuditRecord {
            seq: self.store.next_seq("audit")?,
            subject: subject.to_string(),
            action,
            actor: actor.clone(),
            at: self.clock.now(),
        })
    }

    pub fn append_audit(&self, subject: &str, action: AuditAction, actor: &Principal) -> Result<AuditRecord> {
        let mut cat = self.state.write();
        let rec = self.audit_record(subject, action, actor)?;
        self.store.put(Table::Audit, &seq_key(rec.seq), &rec)?;
        cat.audit.push(rec.clone());
        Ok(rec)
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.state.read().audit.clone()
    }
}
