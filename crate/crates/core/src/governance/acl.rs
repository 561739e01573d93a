//! Deny-by-default role checks shared by every module.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::store::{Store, Table};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Principal(String);

impl Principal {
    /// Internal identity used by platform automation (pipeline runs,
    /// monitor-triggered retraining). It cannot be bound to a token.
    pub const SYSTEM: &'static str = "@system";

    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.starts_with('@') || id.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("invalid principal id {id:?}")));
        }
        Ok(Self(id))
    }

    pub fn system() -> Self {
        Self(Self::SYSTEM.to_string())
    }

    pub fn is_system(&self) -> bool {
        self.0 == Self::SYSTEM
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reader,
    Writer,
    Admin,
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reader" => Ok(Role::Reader),
            "writer" => Ok(Role::Writer),
            "admin" => Ok(Role::Admin),
            _ => Err(Error::invalid(format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Read,
    Write,
    Admin,
}

impl Action {
    fn required_role(self) -> Role {
        match self {
            Action::Read => Role::Reader,
            Action::Write => Role::Writer,
            Action::Admin => Role::Admin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResourceKind {
    Model,
    Collection,
    Endpoint,
    Feedback,
    Pipeline,
}

impl ResourceKind {
    fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Model => "model",
            ResourceKind::Collection => "collection",
            ResourceKind::Endpoint => "endpoint",
            ResourceKind::Feedback => "feedback",
            ResourceKind::Pipeline => "pipeline",
        }
    }
}

/// `*`, `<kind>:*` or `<kind>:<id>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resource {
    Any,
    AllOf(ResourceKind),
    One(ResourceKind, String),
}

impl Resource {
    pub fn model(id: impl Into<String>) -> Self {
        Resource::One(ResourceKind::Model, id.into())
    }
    pub fn collection(id: impl Into<String>) -> Self {
        Resource::One(ResourceKind::Collection, id.into())
    }
    pub fn endpoint(id: impl Into<String>) -> Self {
        Resource::One(ResourceKind::Endpoint, id.into())
    }

    /// Whether a grant on `self` covers a request for `target`.
    pub fn covers(&self, target: &Resource) -> bool {
        match (self, target) {
            (Resource::Any, _) => true,
            (Resource::AllOf(k), Resource::AllOf(t)) => k == t,
            (Resource::AllOf(k), Resource::One(t, _)) => k == t,
            (Resource::One(k, a), Resource::One(t, b)) => k == t && a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Any => f.write_str("*"),
            Resource::AllOf(k) => write!(f, "{}:*", k.as_str()),
            Resource::One(k, id) => write!(f, "{}:{id}", k.as_str()),
        }
    }
}

impl FromStr for Resource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "*" {
            return Ok(Resource::Any);
        }
        let (kind, id) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("bad resource {s:?}")))?;
        let kind = match kind {
            "model" => ResourceKind::Model,
            "collection" => ResourceKind::Collection,
            "endpoint" => ResourceKind::Endpoint,
            "feedback" => ResourceKind::Feedback,
            "pipeline" => ResourceKind::Pipeline,
            _ => return Err(Error::invalid(format!("unknown resource kind {kind:?}"))),
        };
        match id {
            "" => Err(Error::invalid(format!("bad resource {s:?}"))),
            "*" => Ok(Resource::AllOf(kind)),
            id => Ok(Resource::One(kind, id.to_string())),
        }
    }
}

impl Serialize for Resource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Resource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub principal: Principal,
    pub role: Role,
    pub resource: Resource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Denial {
    pub principal: Principal,
    pub action: Action,
    pub resource: Resource,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Default)]
pub struct AccessControl {
    grants: RwLock<Vec<Grant>>,
    denials: Mutex<Vec<Denial>>,
    store: Option<Arc<Store>>,
}

fn grant_key(g: &Grant) -> String {
    format!("{}\u{1f}{}", g.principal, g.resource)
}

impl AccessControl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_store(store: Arc<Store>) -> Result<Self> {
        let grants = store
            .scan::<Grant>(Table::Grants)?
            .into_iter()
            .map(|(_, g)| g)
            .collect();
        Ok(Self {
            grants: RwLock::new(grants),
            denials: Mutex::new(Vec::new()),
            store: Some(store),
        })
    }

    /// Pure lookup, without recording a denial.
    pub fn allows(&self, principal: &Principal, action: Action, resource: &Resource) -> bool {
        if principal.is_system() {
            return true;
        }
        let need = action.required_role();
        self.grants
            .read()
            .iter()
            .any(|g| &g.principal == principal && g.role >= need && g.resource.covers(resource))
    }

    pub fn check(&self, principal: &Principal, action: Action, resource: &Resource) -> Decision {
        if self.allows(principal, action, resource) {
            Decision::Allow
        } else {
            tracing::warn!(%principal, ?action, %resource, "access denied");
            self.denials.lock().push(Denial {
                principal: principal.clone(),
                action,
                resource: resource.clone(),
                at: chrono::Utc::now(),
            });
            Decision::Deny
        }
    }

    pub fn require(&self, principal: &Principal, action: Action, resource: &Resource) -> Result<()> {
        match self.check(principal, action, resource) {
            Decision::Allow => Ok(()),
            Decision::Deny => Err(Error::Forbidden(format!(
                "{principal} may not {} {resource}",
                match action {
                    Action::Read => "read",
                    Action::Write => "write",
                    Action::Admin => "administer",
                }
            ))),
        }
    }

    /// Adds or replaces the grant for `(principal, resource)`.
    pub fn grant(&self, grant: Grant) -> Result<()> {
        if let Some(store) = &self.store {
            store.put(Table::Grants, &grant_key(&grant), &grant)?;
        }
        let mut grants = self.grants.write();
        grants.retain(|g| !(g.principal == grant.principal && g.resource == grant.resource));
        grants.push(grant);
        Ok(())
    }

    pub fn revoke(&self, principal: &Principal, resource: &Resource) -> Result<bool> {
        let mut grants = self.grants.write();
        let before = grants.len();
        grants.retain(|g| !(&g.principal == principal && &g.resource == resource));
        let removed = grants.len() != before;
        if removed {
            if let Some(store) = &self.store {
                store.delete(
                    Table::Grants,
                    &format!("{principal}\u{1f}{resource}"),
                )?;
            }
        }
        Ok(removed)
    }

    pub fn grants(&self) -> Vec<Grant> {
        self.grants.read().clone()
    }

    pub fn denials(&self) -> Vec<Denial> {
        self.denials.lock().clone()
    }
}
