//! Serving: endpoints bound to released model versions, bearer-token
//! authentication, in-process inference, and request logging into the
//! monitor.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use arc_swap::ArcSwap;
use chrono::{DateTime, Utc};
use lru::LruCache;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::governance::{AccessControl, Action, Grant, Principal, Resource, ResourceKind, Role};
use crate::modelkit::{Artifact, ClassifierArtifact, EmbedderArtifact, ModelInput};
use crate::monitor::Monitor;
use crate::registry::{AuditAction, LifecycleStage, ModelVersion, Registry};
use crate::store::{Store, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointStatus {
    Live,
    Paused,
    Retired,
}

impl fmt::Display for EndpointStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndpointStatus::Live => "live",
            EndpointStatus::Paused => "paused",
            EndpointStatus::Retired => "retired",
        })
    }
}

impl FromStr for EndpointStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(EndpointStatus::Live),
            "paused" => Ok(EndpointStatus::Paused),
            "retired" => Ok(EndpointStatus::Retired),
            _ => Err(Error::invalid(format!("unknown endpoint status {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub endpoint_id: String,
    pub route: String,
    pub bound_version: String,
    pub model_id: String,
    pub status: EndpointStatus,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub endpoint_id: String,
    pub model_version: String,
    /// Positive-class probability for classifiers; L2 norm of the pooled
    /// embedding for embedder endpoints.
    pub prediction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServingConfig {
    pub refreeze_on_rebind: bool,
    pub cache_capacity: usize,
}

impl Default for ServingConfig {
    fn default() -> Self {
        Self {
            refreeze_on_rebind: true,
            cache_capacity: 8,
        }
    }
}

/// A loaded, ready-to-run model.
#[derive(Debug)]
pub enum LoadedModel {
    Classifier {
        classifier: Arc<ClassifierArtifact>,
        embedder: Arc<EmbedderArtifact>,
    },
    Embedder(Arc<EmbedderArtifact>),
}

impl LoadedModel {
    pub fn embedder(&self) -> &EmbedderArtifact {
        match self {
            LoadedModel::Classifier { embedder, .. } => embedder,
            LoadedModel::Embedder(e) => e,
        }
    }

    /// `(prediction, features, embedding)`; features are what the monitor
    /// sees.
    pub fn run(&self, input: &ModelInput) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
        let features = input.features(self.embedder())?;
        match self {
            LoadedModel::Classifier { classifier, .. } => Ok((classifier.predict_proba(&features), features, None)),
            LoadedModel::Embedder(_) => {
                let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
                Ok((norm, features.clone(), Some(features)))
            }
        }
    }
}

/// Immutable view published per endpoint; requests take one snapshot and
/// use it throughout.
#[derive(Debug)]
pub struct Binding {
    pub endpoint: Endpoint,
    pub model: Arc<LoadedModel>,
}

/// Static bearer tokens mapped to principals.
#[derive(Default)]
pub struct TokenTable {
    tokens: RwLock<HashMap<String, Principal>>,
}

impl fmt::Debug for TokenTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenTable")
            .field("tokens", &self.tokens.read().len())
            .finish()
    }
}

impl TokenTable {
    pub fn insert(&self, principal: Principal, token: &str) -> Result<()> {
        if token.len() < 8 || token.chars().any(char::is_whitespace) {
            return Err(Error::invalid("tokens must be at least 8 non-whitespace characters"));
        }
        self.tokens.write().insert(token.to_string(), principal);
        Ok(())
    }

    /// Parses `principal=token`.
    pub fn insert_line(&self, line: &str) -> Result<()> {
        let (p, t) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid("token entries must look like principal=token"))?;
        self.insert(Principal::new(p.trim())?, t.trim())
    }

    pub fn revoke(&self, token: &str) -> bool {
        self.tokens.write().remove(token).is_some()
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal> {
        self.tokens.read().get(token).cloned().ok_or(Error::Unauthorized)
    }
}

pub fn validate_route(route: &str) -> Result<()> {
    let ok = !route.is_empty()
        && route.len() <= 64
        && route
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("route {route:?} must be 1-64 characters of [a-z0-9_-]")))
    }
}

pub struct Serving {
    store: Arc<Store>,
    registry: Arc<Registry>,
    monitor: Arc<Monitor>,
    acl: Arc<AccessControl>,
    clock: Arc<dyn Clock>,
    config: ServingConfig,
    tokens: TokenTable,
    cache: Mutex<LruCache<String, Arc<Artifact>>>,
    bindings: RwLock<BTreeMap<String, Arc<ArcSwap<Binding>>>>,
    /// Serializes endpoint mutations (create, rebind, status changes).
    admin: Mutex<()>,
}

impl fmt::Debug for Serving {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Serving")
            .field("config", &self.config)
            .field("endpoints", &self.bindings.read().len())
            .finish_non_exhaustive()
    }
}

impl Serving {
    pub fn open(
        store: Arc<Store>,
        registry: Arc<Registry>,
        monitor: Arc<Monitor>,
        acl: Arc<AccessControl>,
        clock: Arc<dyn Clock>,
        config: ServingConfig,
    ) -> Result<Self> {
        let cap = NonZeroUsize::new(config.cache_capacity).ok_or_else(|| Error::invalid("cache capacity must be positive"))?;
        let serving = Self {
            store: store.clone(),
            registry,
            monitor,
            acl,
            clock,
            config,
            tokens: TokenTable::default(),
            cache: Mutex::new(LruCache::new(cap)),
            bindings: RwLock::new(BTreeMap::new()),
            admin: Mutex::new(()),
        };
        for (_, ep) in store.scan::<Endpoint>(Table::Endpoints)? {
            let model = serving.load(&ep.bound_version)?;
            serving.monitor.register_endpoint(&ep.endpoint_id, true);
            serving
                .bindings
                .write()
                .insert(ep.endpoint_id.clone(), Arc::new(ArcSwap::from_pointee(Binding { endpoint: ep, model })));
        }
        Ok(serving)
    }

    pub fn config(&self) -> &ServingConfig {
        &self.config
    }

    pub fn tokens(&self) -> &TokenTable {
        &self.tokens
    }

    fn artifact(&self, digest: &str) -> Result<Arc<Artifact>> {
        // holding the lock across the fill serializes loads and keeps the
        // cache consistent; reads are short
        let mut cache = self.cache.lock();
        if let Some(a) = cache.get(digest) {
            return Ok(a.clone());
        }
        let bytes = self.registry.read_blob(digest)?;
        let artifact = Arc::new(Artifact::from_bytes(&bytes)?);
        cache.put(digest.to_string(), artifact.clone());
        Ok(artifact)
    }

    pub fn cached_digests(&self) -> Vec<String> {
        self.cache.lock().iter().map(|(k, _)| k.clone()).collect()
    }

    /// Loads a version's artifact (and its parent embedder for
    /// classifiers), verifying digests.
    pub fn load(&self, version_id: &str) -> Result<Arc<LoadedModel>> {
        let v = self.registry.version_unchecked(version_id)?;
        match &*self.artifact(&v.artifact_digest)? {
            Artifact::Embedder(e) => Ok(Arc::new(LoadedModel::Embedder(Arc::new(e.clone())))),
            Artifact::Classifier(c) => match &*self.artifact(&c.parent)? {
                Artifact::Embedder(e) => {
                    if e.dim != c.weights.len() {
                        return Err(Error::invalid("classifier weights do not match the parent embedder"));
                    }
                    Ok(Arc::new(LoadedModel::Classifier {
                        classifier: Arc::new(c.clone()),
                        embedder: Arc::new(e.clone()),
                    }))
                }
                Artifact::Classifier(_) => Err(Error::invalid("classifier parent is not an embedder")),
            },
        }
    }

    fn releasable(&self, version_id: &str) -> Result<ModelVersion> {
        let v = self.registry.version_unchecked(version_id)?;
        if !v.stage.is_released() {
            return Err(Error::GateFailed(format!(
                "version {version_id} is in {}, endpoints need S4_RELEASED or S5_MONITORED",
                v.stage
            )));
        }
        Ok(v)
    }

    fn mark_monitored(&self, v: &ModelVersion) -> Result<()> {
        if v.stage == LifecycleStage::Released {
            self.registry
                .transition_stage(&Principal::system(), &v.version_id, LifecycleStage::Monitored, None)?;
        }
        Ok(())
    }

    fn binding(&self, endpoint_id: &str) -> Result<Arc<ArcSwap<Binding>>> {
        self.bindings
            .read()
            .get(endpoint_id)
            .cloned()
            .ok_or_else(|| Error::not_found(format!("endpoint {endpoint_id}")))
    }

    pub fn create_endpoint(&self, caller: &Principal, version_id: &str, route: &str) -> Result<Endpoint> {
        self.acl.require(caller, Action::Write, &Resource::AllOf(ResourceKind::Endpoint))?;
        validate_route(route)?;
        let v = self.releasable(version_id)?;
        self.acl.require(caller, Action::Read, &Resource::model(&v.model_id))?;
        let _admin = self.admin.lock();
        if self.bindings.read().values().any(|b| b.load().endpoint.route == route) {
            return Err(Error::Conflict(format!("route {route} is taken")));
        }
        let model = self.load(version_id)?;
        let now = self.clock.now();
        let ep = Endpoint {
            endpoint_id: format!("ep-{:06}", self.store.next_seq("endpoint")?),
            route: route.to_string(),
            bound_version: version_id.to_string(),
            model_id: v.model_id.clone(),
            status: EndpointStatus::Live,
            created_at: now,
            updated_at: now,
        };
        self.store.put(Table::Endpoints, &ep.endpoint_id, &ep)?;
        self.monitor.register_endpoint(&ep.endpoint_id, true);
        self.bindings.write().insert(
            ep.endpoint_id.clone(),
            Arc::new(ArcSwap::from_pointee(Binding {
                endpoint: ep.clone(),
                model,
            })),
        );
        self.registry.append_audit(
            &ep.endpoint_id,
            AuditAction::EndpointBound {
                version_id: version_id.to_string(),
            },
            caller,
        )?;
        self.mark_monitored(&v)?;
        if !caller.is_system() {
            self.acl.grant(Grant {
                principal: caller.clone(),
                role: Role::Admin,
                resource: Resource::endpoint(&ep.endpoint_id),
            })?;
        }
        tracing::info!(endpoint = %ep.endpoint_id, route, version_id, "endpoint created");
        Ok(ep)
    }

    pub fn get_endpoint(&self, caller: &Principal, endpoint_id: &str) -> Result<Endpoint> {
        let b = self.binding(endpoint_id)?;
        self.acl.require(caller, Action::Read, &Resource::endpoint(endpoint_id))?;
        Ok(b.load().endpoint.clone())
    }

    pub fn endpoint_by_route(&self, route: &str) -> Result<Endpoint> {
        self.bindings
            .read()
            .values()
            .map(|b| b.load().endpoint.clone())
            .find(|e| e.route == route)
            .ok_or_else(|| Error::not_found(format!("route {route}")))
    }

    pub fn list_endpoints(&self, caller: &Principal) -> Vec<Endpoint> {
        self.bindings
            .read()
            .values()
            .map(|b| b.load().endpoint.clone())
            .filter(|e| self.acl.allows(caller, Action::Read, &Resource::endpoint(&e.endpoint_id)))
            .collect()
    }

    /// Authenticates `token` and runs [`Serving::infer`].
    pub fn infer_with_token(&self, token: &str, route: &str, input: &ModelInput) -> Result<InferenceResponse> {
        let caller = self.tokens.authenticate(token)?;
        self.infer(&caller, route, input)
    }

    /// Runs the model bound to `route`. Exactly one inference log is
    /// recorded per successful call and none for rejected calls.
    pub fn infer(&self, caller: &Principal, route: &str, input: &ModelInput) -> Result<InferenceResponse> {
        let started = Instant::now();
        let endpoint_id = self.endpoint_by_route(route)?.endpoint_id;
        self.acl.require(caller, Action::Read, &Resource::endpoint(&endpoint_id))?;
        let binding = self.binding(&endpoint_id)?.load_full();
        match binding.endpoint.status {
            EndpointStatus::Live => {}
            s => return Err(Error::Unavailable(format!("endpoint {endpoint_id} is {s}"))),
        }
        let (prediction, features, embedding) = binding.model.run(input)?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        self.monitor.record(&endpoint_id, features, prediction, latency_ms)?;
        Ok(InferenceResponse {
            endpoint_id,
            model_version: binding.endpoint.bound_version.clone(),
            prediction,
            embedding,
            latency_ms,
        })
    }

    fn publish(&self, slot: &ArcSwap<Binding>, endpoint: Endpoint, model: Arc<LoadedModel>) -> Result<()> {
        self.store.put(Table::Endpoints, &endpoint.endpoint_id, &endpoint)?;
        slot.store(Arc::new(Binding { endpoint, model }));
        Ok(())
    }

    /// Atomically switches the endpoint to another released version.
    /// Requests already holding the old binding finish on it.
    pub fn rebind(&self, caller: &Principal, endpoint_id: &str, version_id: &str) -> Result<Endpoint> {
        let slot = self.binding(endpoint_id)?;
        self.acl.require(caller, Action::Write, &Resource::endpoint(endpoint_id))?;
        let _admin = self.admin.lock();
        let current = slot.load_full();
        if current.endpoint.status == EndpointStatus::Retired {
            return Err(Error::InvalidState(format!("endpoint {endpoint_id} is retired")));
        }
        let v = self.releasable(version_id)?;
        let model = self.load(version_id)?;
        let mut ep = current.endpoint.clone();
        let from = std::mem::replace(&mut ep.bound_version, version_id.to_string());
        ep.model_id = v.model_id.clone();
        ep.updated_at = self.clock.now();
        self.publish(&slot, ep.clone(), model)?;
        self.registry.append_audit(
            endpoint_id,
            AuditAction::EndpointRebound {
                from_version: from,
                to_version: version_id.to_string(),
            },
            caller,
        )?;
        self.mark_monitored(&v)?;
        if self.config.refreeze_on_rebind {
            self.monitor.reset_endpoint(endpoint_id, true)?;
        } else {
            self.monitor.resolve_outstanding(endpoint_id)?;
        }
        tracing::info!(endpoint_id, version_id, "endpoint rebound");
        Ok(ep)
    }

    fn set_status(&self, caller: &Principal, endpoint_id: &str, to: EndpointStatus) -> Result<Endpoint> {
        let slot = self.binding(endpoint_id)?;
        self.acl.require(caller, Action::Write, &Resource::endpoint(endpoint_id))?;
        let _admin = self.admin.lock();
        let current = slot.load_full();
        let from = current.endpoint.status;
        if from == EndpointStatus::Retired {
            return Err(Error::InvalidState(format!("endpoint {endpoint_id} is retired")));
        }
        if from == to {
            return Ok(current.endpoint.clone());
        }
        let mut ep = current.endpoint.clone();
        ep.status = to;
        ep.updated_at = self.clock.now();
        self.publish(&slot, ep.clone(), current.model.clone())?;
        self.registry
            .append_audit(endpoint_id, AuditAction::EndpointStatus { status: to.to_string() }, caller)?;
        Ok(ep)
    }

    pub fn pause(&self, caller: &Principal, endpoint_id: &str) -> Result<Endpoint> {
        self.set_status(caller, endpoint_id, EndpointStatus::Paused)
    }

    pub fn resume(&self, caller: &Principal, endpoint_id: &str) -> Result<Endpoint> {
        self.set_status(caller, endpoint_id, EndpointStatus::Live)
    }

    /// Terminal: a retired endpoint can no longer be resumed or rebound.
    pub fn retire(&self, caller: &Principal, endpoint_id: &str) -> Result<Endpoint> {
        self.set_status(caller, endpoint_id, EndpointStatus::Retired)
    }
}
