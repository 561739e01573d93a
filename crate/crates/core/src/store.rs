//! Embedded transactional key-value persistence.
//!
//! Every table maps string keys to byte values; records are stored as JSON.

use std::path::Path;

use redb::backends::InMemoryBackend;
use redb::{Database, ReadableDatabase, ReadableTable, TableDefinition};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

type Def = TableDefinition<'static, &'static str, &'static [u8]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Models,
    Versions,
    Audit,
    Blobs,
    Grants,
    Collections,
    Entries,
    Runs,
    Triggers,
    Endpoints,
    Reports,
    References,
    Events,
    Feedback,
    RewardModels,
    Meta,
}

impl Table {
    const ALL: [Table; 16] = [
        Table::Models,
        Table::Versions,
        Table::Audit,
        Table::Blobs,
        Table::Grants,
        Table::Collections,
        Table::Entries,
        Table::Runs,
        Table::Triggers,
        Table::Endpoints,
        Table::Reports,
        Table::References,
        Table::Events,
        Table::Feedback,
        Table::RewardModels,
        Table::Meta,
    ];

    fn def(self) -> Def {
        let name = match self {
            Table::Models => "models",
            Table::Versions => "versions",
            Table::Audit => "audit",
            Table::Blobs => "blobs",
            Table::Grants => "grants",
            Table::Collections => "collections",
            Table::Entries => "entries",
            Table::Runs => "runs",
            Table::Triggers => "triggers",
            Table::Endpoints => "endpoints",
            Table::Reports => "reports",
            Table::References => "references",
            Table::Events => "events",
            Table::Feedback => "feedback",
            Table::RewardModels => "reward_models",
            Table::Meta => "meta",
        };
        TableDefinition::new(name)
    }
}

pub struct Store {
    db: Database,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").finish_non_exhaustive()
    }
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let db = Database::create(path)?;
        Self::init(db)
    }

    pub fn in_memory() -> Result<Self> {
        let db = Database::builder().create_with_backend(InMemoryBackend::new())?;
        Self::init(db)
    }

    fn init(db: Database) -> Result<Self> {
        let txn = db.begin_write()?;
        for t in Table::ALL {
            txn.open_table(t.def())?;
        }
        txn.commit()?;
        Ok(Self { db })
    }

    pub fn put<T: Serialize>(&self, table: Table, key: &str, value: &T) -> Result<()> {
        let bytes = serde_json::to_vec(value)?;
        self.put_raw(table, key, &bytes)
    }

    pub fn put_raw(&self, table: Table, key: &str, value: &[u8]) -> Result<()> {
        let txn = self.db.begin_write()?;
        {
            let mut t = txn.open_table(table.def())?;
            t.insert(key, value)?;
        }
        txn.commit()?;
        Ok(())
    }

    /// Writes several raw records in one transaction.
    pub fn put_raw_many<'a, I>(&self, table: Table, items: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a [u8])>,
    {
        let txn = self.db.begin_write()?;
        {
            let mut t = txn.open_table(table.def())?;
            for (k, v) in items {
                t.insert(k, v)?;
            }
        }
        txn.commit()?;
        Ok(())
    }

    /// Writes records across tables atomically.
    pub fn write_batch(&self, items: &[(Table, String, Vec<u8>)]) -> Result<()> {
        let txn = self.db.begin_write()?;
        for (table, key, value) in items {
            let mut t = txn.open_table(table.def())?;
            t.insert(key.as_str(), value.as_slice())?;
        }
        txn.commit()?;
        Ok(())
    }

    pub fn get<T: DeserializeOwned>(&self, table: Table, key: &str) -> Result<Option<T>> {
        match self.get_raw(table, key)? {
            Some(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            None => Ok(None),
        }
    }

    pub fn get_raw(&self, table: Table, key: &str) -> Result<Option<Vec<u8>>> {
        let txn = self.db.begin_read()?;
        let t = txn.open_table(table.def())?;
        Ok(t.get(key)?.map(|v| v.value().to_vec()))
    }

    /// All records of a table in key order.
    pub fn scan<T: DeserializeOwned>(&self, table: Table) -> Result<Vec<(String, T)>> {
        self.scan_raw(table)?
            .into_iter()
            .map(|(k, v)| Ok((k, serde_json::from_slice(&v)?)))
            .collect()
    }

    pub fn scan_raw(&self, table: Table) -> Result<Vec<(String, Vec<u8>)>> {
        let txn = self.db.begin_read()?;
        let t = txn.open_table(table.def())?;
        let mut out = Vec::new();
        for item in t.iter()? {
            let (k, v) = item?;
            out.push((k.value().to_string(), v.value().to_vec()));
        }
        Ok(out)
    }

    pub fn delete(&self, table: Table, key: &str) -> Result<bool> {
        let txn = self.db.begin_write()?;
        let existed = {
            let mut t = txn.open_table(table.def())?;
            let old = t.remove(key)?;
            old.is_some()
        };
        txn.commit()?;
        Ok(existed)
    }

    /// Monotonic persisted counter, used for opaque sequential ids.
    pub fn next_seq(&self, name: &str) -> Result<u64> {
        let key = format!("seq/{name}");
        let txn = self.db.begin_write()?;
        let next = {
            let mut t = txn.open_table(Table::Meta.def())?;
            let cur = match t.get(key.as_str())? {
                Some(v) => {
                    let b: [u8; 8] = v.value().try_into().unwrap_or([0; 8]);
                    u64::from_le_bytes(b)
                }
                None => 0,
            };
            let next = cur + 1;
            t.insert(key.as_str(), next.to_le_bytes().as_slice())?;
            next
        };
        txn.commit()?;
        Ok(next)
    }
}

pub fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(value)?)
}

/// Zero-padded key so that lexicographic order equals numeric order.
pub fn seq_key(n: u64) -> String {
    format!("{n:020}")
}
