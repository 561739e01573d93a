//! Embedding farm: named collections of fixed-dimension vectors with
//! exact and HNSW search, tag filters, and SEF1 import/export.

mod collection;
pub mod format;
mod hnsw;
mod metric;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

pub use collection::{result_order, Collection, EmbeddingEntry, SearchResult, Snapshot, MAX_KEY_BYTES};
pub use format::{SefEntry, SefFile};
pub use hnsw::{HnswIndex, HnswParams};
pub use metric::{dot, norm, Metric};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::governance::{AccessControl, Action, Grant, Principal, Resource, ResourceKind, Role};
use crate::store::{json, Store, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionInfo {
    pub name: String,
    pub dim: usize,
    pub metric: Metric,
    pub entry_count: usize,
    /// Resource string ACL grants refer to.
    pub acl: String,
    pub created_at: DateTime<Utc>,
    pub indexed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CollectionMeta {
    name: String,
    dim: usize,
    metric: Metric,
    created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewEntry {
    pub key: String,
    pub vector: Vec<f32>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Exact,
    Ann,
}

fn entry_key(collection: &str, key: &str) -> String {
    format!("{collection}\u{0}{key}")
}

pub fn validate_collection_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "collection name {name:?} must be 1-64 characters of [A-Za-z0-9._-]"
        )))
    }
}

pub struct EmbeddingFarm {
    store: Arc<Store>,
    acl: Arc<AccessControl>,
    clock: Arc<dyn Clock>,
    collections: RwLock<BTreeMap<String, Arc<Collection>>>,
}

impl fmt::Debug for EmbeddingFarm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingFarm")
            .field("collections", &self.collections.read().len())
            .finish_non_exhaustive()
    }
}

impl EmbeddingFarm {
    pub fn open(store: Arc<Store>, acl: Arc<AccessControl>, clock: Arc<dyn Clock>) -> Result<Self> {
        let mut snaps = BTreeMap::new();
        for (_, meta) in store.scan::<CollectionMeta>(Table::Collections)? {
            let snap = Snapshot::new(meta.dim, meta.metric);
            snaps.insert(meta.name.clone(), (meta, snap));
        }
        for (k, entry) in store.scan::<EmbeddingEntry>(Table::Entries)? {
            let name = k.split('\u{0}').next().unwrap_or_default();
            let Some((_, snap)) = snaps.get_mut(name) else {
                return Err(Error::Storage(format!("entry for unknown collection {name:?}")));
            };
            snap.upsert(entry)?;
        }
        let collections = snaps
            .into_iter()
            .map(|(name, (meta, snap))| (name, Arc::new(Collection::from_snapshot(meta.name, meta.created_at, snap))))
            .collect();
        Ok(Self {
            store,
            acl,
            clock,
            collections: RwLock::new(collections),
        })
    }

    fn info_of(c: &Collection) -> CollectionInfo {
        let snap = c.snapshot();
        CollectionInfo {
            name: c.name.clone(),
            dim: snap.dim,
            metric: snap.metric,
            entry_count: snap.len(),
            acl: Resource::collection(&c.name).to_string(),
            created_at: c.created_at,
            indexed: c.index_revision() == Some(snap.revision),
        }
    }

    fn lookup(&self, name: &str) -> Result<Arc<Collection>> {
        self.collections
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| Error::not_found(format!("collection {name}")))
    }

    /// Looks up a collection after checking `action` on it.
    pub fn collection(&self, caller: &Principal, name: &str, action: Action) -> Result<Arc<Collection>> {
        let c = self.lookup(name)?;
        self.acl.require(caller, action, &Resource::collection(name))?;
        Ok(c)
    }

    pub fn create_collection(&self, caller: &Principal, name: &str, dim: usize, metric: Metric) -> Result<CollectionInfo> {
        self.acl.require(caller, Action::Write, &Resource::AllOf(ResourceKind::Collection))?;
        validate_collection_name(name)?;
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut map = self.collections.write();
        if map.contains_key(name) {
            return Err(Error::Conflict(format!("collection {name} already exists")));
        }
        let meta = CollectionMeta {
            name: name.to_string(),
            dim,
            metric,
            created_at: self.clock.now(),
        };
        self.store.put(Table::Collections, name, &meta)?;
        let c = Arc::new(Collection::new(meta.name, dim, metric, meta.created_at));
        map.insert(name.to_string(), c.clone());
        drop(map);
        self.grant_owner(caller, name)?;
        Ok(Self::info_of(&c))
    }

    fn grant_owner(&self, caller: &Principal, name: &str) -> Result<()> {
        if caller.is_system() {
            return Ok(());
        }
        self.acl.grant(Grant {
            principal: caller.clone(),
            role: Role::Admin,
            resource: Resource::collection(name),
        })
    }

    pub fn info(&self, caller: &Principal, name: &str) -> Result<CollectionInfo> {
        Ok(Self::info_of(&*self.collection(caller, name, Action::Read)?))
    }

    pub fn list_collections(&self, caller: &Principal) -> Vec<CollectionInfo> {
        self.collections
            .read()
            .values()
            .filter(|c| self.acl.allows(caller, Action::Read, &Resource::collection(&c.name)))
            .map(|c| Self::info_of(c))
            .collect()
    }

    pub fn upsert(&self, caller: &Principal, name: &str, entry: NewEntry) -> Result<EmbeddingEntry> {
        let key = entry.key.clone();
        self.upsert_batch(caller, name, vec![entry])?;
        self.lookup(name)?
            .snapshot()
            .get(&key)
            .ok_or_else(|| Error::Storage("entry vanished after upsert".into()))
    }

    /// Inserts or replaces all entries atomically: either every entry is
    /// valid and persisted, or nothing changes.
    pub fn upsert_batch(&self, caller: &Principal, name: &str, entries: Vec<NewEntry>) -> Result<usize> {
        let c = self.collection(caller, name, Action::Write)?;
        let now = self.clock.now();
        let full: Vec<EmbeddingEntry> = entries
            .into_iter()
            .map(|e| EmbeddingEntry {
                key: e.key,
                vector: e.vector,
                tags: e.tags,
                updated_at: now,
            })
            .collect();
        let n = full.len();
        let rows = full
            .iter()
            .map(|e| Ok((Table::Entries, entry_key(name, &e.key), json(e)?)))
            .collect::<Result<Vec<_>>>()?;
        c.mutate(
            |s| full.into_iter().try_for_each(|e| s.upsert(e)),
            |_| self.store.write_batch(&rows),
        )?;
        Ok(n)
    }

    pub fn get(&self, caller: &Principal, name: &str, key: &str) -> Result<EmbeddingEntry> {
        self.collection(caller, name, Action::Read)?
            .snapshot()
            .get(key)
            .ok_or_else(|| Error::not_found(format!("key {key:?} in collection {name}")))
    }

    pub fn batch_get(&self, caller: &Principal, name: &str, keys: &[String]) -> Result<Vec<Option<EmbeddingEntry>>> {
        let snap = self.collection(caller, name, Action::Read)?.snapshot();
        Ok(keys.iter().map(|k| snap.get(k)).collect())
    }

    pub fn search(
        &self,
        caller: &Principal,
        name: &str,
        query: &[f32],
        k: usize,
        tags: &[String],
        mode: SearchMode,
    ) -> Result<Vec<SearchResult>> {
        let c = self.collection(caller, name, Action::Read)?;
        match mode {
            SearchMode::Exact => c.snapshot().search_exact(query, k, tags),
            SearchMode::Ann => c.search_ann(query, k, tags),
        }
    }

    /// Builds the ANN index synchronously from the current snapshot.
    pub fn build_index(&self, caller: &Principal, name: &str) -> Result<CollectionInfo> {
        let c = self.collection(caller, name, Action::Write)?;
        c.build_index();
        Ok(Self::info_of(&c))
    }

    /// Builds the ANN index on a separate thread; searches keep using the
    /// previous snapshot and index until it is published.
    pub fn build_index_background(&self, caller: &Principal, name: &str) -> Result<JoinHandle<()>> {
        let c = self.collection(caller, name, Action::Write)?;
        Ok(std::thread::spawn(move || {
            c.build_index();
        }))
    }

    pub fn export_bytes(&self, caller: &Principal, name: &str) -> Result<Vec<u8>> {
        let snap = self.collection(caller, name, Action::Read)?.snapshot();
        format::encode(&SefFile {
            metric: snap.metric,
            dim: snap.dim,
            entries: snap
                .entries_sorted()
                .into_iter()
                .map(|e| SefEntry {
                    key: e.key,
                    tags: e.tags,
                    vector: e.vector,
                })
                .collect(),
        })
    }

    pub fn export_to(&self, caller: &Principal, name: &str, path: &Path) -> Result<u64> {
        let bytes = self.export_bytes(caller, name)?;
        std::fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }

    /// Creates collection `name` from a SEF1 file. Fails without side
    /// effects if the file is corrupt or the name is taken.
    pub fn import_bytes(&self, caller: &Principal, name: &str, bytes: &[u8]) -> Result<CollectionInfo> {
        self.acl.require(caller, Action::Write, &Resource::AllOf(ResourceKind::Collection))?;
        validate_collection_name(name)?;
        let file = format::decode(bytes)?;
        let now = self.clock.now();
        let mut snap = Snapshot::new(file.dim, file.metric);
        let mut rows = Vec::with_capacity(file.entries.len() + 1);
        for e in file.entries {
            let entry = EmbeddingEntry {
                key: e.key,
                vector: e.vector,
                tags: e.tags,
                updated_at: now,
            };
            rows.push((Table::Entries, entry_key(name, &entry.key), json(&entry)?));
            snap.upsert(entry)?;
        }
        let meta = CollectionMeta {
            name: name.to_string(),
            dim: file.dim,
            metric: file.metric,
            created_at: now,
        };
        rows.push((Table::Collections, name.to_string(), json(&meta)?));
        let mut map = self.collections.write();
        if map.contains_key(name) {
            return Err(Error::Conflict(format!("collection {name} already exists")));
        }
        self.store.write_batch(&rows)?;
        let c = Arc::new(Collection::from_snapshot(name.to_string(), now, snap));
        map.insert(name.to_string(), c.clone());
        drop(map);
        self.grant_owner(caller, name)?;
        Ok(Self::info_of(&c))
    }

    pub fn import_from(&self, caller: &Principal, name: &str, path: &Path) -> Result<CollectionInfo> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::not_found(path.display()),
            _ => Error::Io(e),
        })?;
        self.import_bytes(caller, name, &bytes)
    }
}
