use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use arc_swap::{ArcSwap, ArcSwapOption};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::hnsw::{HnswIndex, HnswParams};
use super::metric::{norm, Metric};
use crate::error::{Error, Result};

pub const MAX_KEY_BYTES: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub key: String,
    pub vector: Vec<f32>,
    pub tags: BTreeSet<String>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub key: String,
    pub score: f64,
    pub rank: usize,
}

/// Descending score, then ascending key.
pub fn result_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Immutable view of a collection's contents at one revision.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub dim: usize,
    pub metric: Metric,
    pub revision: u64,
    keys: Vec<String>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    tags: Vec<BTreeSet<String>>,
    updated: Vec<DateTime<Utc>>,
    slots: HashMap<String, usize>,
}

impl Snapshot {
    pub fn new(dim: usize, metric: Metric) -> Self {
        Self {
            dim,
            metric,
            revision: 0,
            keys: Vec::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            tags: Vec::new(),
            updated: Vec::new(),
            slots: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, slot: usize) -> &str {
        &self.keys[slot]
    }

    pub fn vector(&self, slot: usize) -> &[f32] {
        &self.vectors[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn norm(&self, slot: usize) -> f64 {
        self.norms[slot]
    }

    pub fn tags(&self, slot: usize) -> &BTreeSet<String> {
        &self.tags[slot]
    }

    pub fn has_tags(&self, slot: usize, required: &[String]) -> bool {
        required.iter().all(|t| self.tags[slot].contains(t))
    }

    pub fn entry(&self, slot: usize) -> EmbeddingEntry {
        EmbeddingEntry {
            key: self.keys[slot].clone(),
            vector: self.vector(slot).to_vec(),
            tags: self.tags[slot].clone(),
            updated_at: self.updated[slot],
        }
    }

    pub fn get(&self, key: &str) -> Option<EmbeddingEntry> {
        self.slots.get(key).map(|&s| self.entry(s))
    }

    /// Entries in key order.
    pub fn entries_sorted(&self) -> Vec<EmbeddingEntry> {
        let mut slots: Vec<usize> = (0..self.len()).collect();
        slots.sort_by(|a, b| self.keys[*a].cmp(&self.keys[*b]));
        slots.into_iter().map(|s| self.entry(s)).collect()
    }

    pub fn validate_vector(&self, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector has {} components, collection dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vector has non-finite components"));
        }
        if self.metric == Metric::Cosine && vector.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("cosine collections reject the zero vector"));
        }
        Ok(())
    }

    pub(crate) fn upsert(&mut self, entry: EmbeddingEntry) -> Result<()> {
        self.validate_vector(&entry.vector)?;
        validate_label(&entry.key, "key")?;
        if entry.tags.len() > u16::MAX as usize {
            return Err(Error::invalid("too many tags"));
        }
        for t in &entry.tags {
            validate_label(t, "tag")?;
        }
        let n = norm(&entry.vector);
        match self.slots.get(&entry.key) {
            Some(&s) => {
                self.vectors[s * self.dim..(s + 1) * self.dim].copy_from_slice(&entry.vector);
                self.norms[s] = n;
                self.tags[s] = entry.tags;
                self.updated[s] = entry.updated_at;
            }
            None => {
                self.slots.insert(entry.key.clone(), self.keys.len());
                self.keys.push(entry.key);
                self.vectors.extend_from_slice(&entry.vector);
                self.norms.push(n);
                self.tags.push(entry.tags);
                self.updated.push(entry.updated_at);
            }
        }
        self.revision += 1;
        Ok(())
    }

    pub fn score(&self, query: &[f32], query_norm: f64, slot: usize) -> f64 {
        self.metric.score(query, query_norm, self.vector(slot), self.norms[slot])
    }

    /// Exact top-k by full scan with a bounded heap.
    pub fn search_exact(&self, query: &[f32], k: usize, tags: &[String]) -> Result<Vec<SearchResult>> {
        self.validate_query(query, k)?;
        let qn = norm(query);
        // max-heap on "worse-ness" keeps the k best seen so far
        let mut heap: BinaryHeap<Ranked<'_>> = BinaryHeap::with_capacity(k + 1);
        for slot in 0..self.len() {
            if !self.has_tags(slot, tags) {
                continue;
            }
            let cand = Ranked {
                score: self.score(query, qn, slot),
                key: &self.keys[slot],
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        Ok(finish(heap.into_sorted_vec().into_iter().map(|r| (r.score, r.key.to_string()))))
    }

    pub(crate) fn validate_query(&self, query: &[f32], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if query.len() != self.dim {
            return Err(Error::invalid(format!(
                "query has {} components, collection dimension is {}",
                query.len(),
                self.dim
            )));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query has non-finite components"));
        }
        if self.metric == Metric::Cosine && query.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("cosine search needs a nonzero query"));
        }
        Ok(())
    }
}

fn validate_label(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.len() > MAX_KEY_BYTES {
        return Err(Error::invalid(format!("{what} must be 1..={MAX_KEY_BYTES} bytes")));
    }
    Ok(())
}

/// Orders candidates so that "greater" means "worse result".
#[derive(Debug)]
struct Ranked<'a> {
    score: f64,
    key: &'a str,
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked<'_> {}
impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        result_order((self.score, self.key), (other.score, other.key))
    }
}

/// Sorts `(score, key)` pairs into ranked results.
pub(crate) fn finish(items: impl Iterator<Item = (f64, String)>) -> Vec<SearchResult> {
    let mut v: Vec<(f64, String)> = items.collect();
    v.sort_by(|a, b| result_order((a.0, &a.1), (b.0, &b.1)));
    v.into_iter()
        .enumerate()
        .map(|(i, (score, key))| SearchResult { key, score, rank: i + 1 })
        .collect()
}

/// A named collection. Readers load the published [`Snapshot`] without
/// locking; writers are serialized and publish a modified copy.
#[derive(Debug)]
pub struct Collection {
    pub name: String,
    pub created_at: DateTime<Utc>,
    data: ArcSwap<Snapshot>,
    index: ArcSwapOption<HnswIndex>,
    writer: Mutex<()>,
    params: HnswParams,
}

impl Collection {
    pub fn new(name: String, dim: usize, metric: Metric, created_at: DateTime<Utc>) -> Self {
        Self {
            name,
            created_at,
            data: ArcSwap::from_pointee(Snapshot::new(dim, metric)),
            index: ArcSwapOption::empty(),
            writer: Mutex::new(()),
            params: HnswParams::default(),
        }
    }

    pub(crate) fn from_snapshot(name: String, created_at: DateTime<Utc>, snap: Snapshot) -> Self {
        Self {
            name,
            created_at,
            data: ArcSwap::from_pointee(snap),
            index: ArcSwapOption::empty(),
            writer: Mutex::new(()),
            params: HnswParams::default(),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.data.load_full()
    }

    /// Applies `f` to a private copy of the data and publishes the result.
    /// `persist` runs before publication; if it fails nothing changes.
    pub(crate) fn mutate<F, P>(&self, f: F, persist: P) -> Result<()>
    where
        F: FnOnce(&mut Snapshot) -> Result<()>,
        P: FnOnce(&Snapshot) -> Result<()>,
    {
        let _writer = self.writer.lock();
        let mut next: Snapshot = (*self.data.load_full()).clone();
        f(&mut next)?;
        persist(&next)?;
        self.data.store(Arc::new(next));
        Ok(())
    }

    pub fn build_index(&self) -> Arc<HnswIndex> {
        let snap = self.snapshot();
        let idx = Arc::new(HnswIndex::build(&snap, self.params));
        // a slower build from an older snapshot must not replace a newer index
        self.index.rcu(|cur| match cur {
            Some(c) if c.revision() > idx.revision() => Some(c.clone()),
            _ => Some(idx.clone()),
        });
        idx
    }

    pub fn search_ann(&self, query: &[f32], k: usize, tags: &[String]) -> Result<Vec<SearchResult>> {
        let snap = self.snapshot();
        snap.validate_query(query, k)?;
        let idx = self.index.load_full();
        match idx {
            Some(idx) if idx.revision() == snap.revision => Ok(idx.search(&snap, query, k, tags)),
            _ => Err(Error::RebuildRequired),
        }
    }

    pub fn index_revision(&self) -> Option<u64> {
        self.index.load().as_ref().map(|i| i.revision())
    }
}
