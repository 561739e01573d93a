//! Hierarchical navigable small-world graph over a collection snapshot.
//!
//! The graph stores only slot ids; vectors are read from the [`Snapshot`]
//! it was built from, so an index is valid for exactly one revision.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::collection::{finish, SearchResult, Snapshot};
use super::metric::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HnswParams {
    /// Maximum neighbours per node on the upper layers; the base layer
    /// keeps up to twice as many.
    pub max_degree: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            max_degree: 16,
            ef_construction: 100,
            ef_search: 64,
            seed: 0x5eed_cafe,
        }
    }
}

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy)]
struct Near {
    d: f64,
    id: u32,
}

impl PartialEq for Near {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Near {}
impl PartialOrd for Near {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Near {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d.total_cmp(&other.d).then(self.id.cmp(&other.id))
    }
}

struct Query<'a> {
    v: &'a [f32],
    norm: f64,
}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self { marks: vec![0; n], epoch: 0 }
    }

    fn reset(&mut self) {
        self.epoch += 1;
        if self.epoch == u32::MAX {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time `id` is seen in this epoch.
    fn insert(&mut self, id: u32) -> bool {
        let m = &mut self.marks[id as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    revision: u64,
    params: HnswParams,
    entry: Option<u32>,
    max_level: usize,
    /// `links[node][level]`
    links: Vec<Vec<Vec<u32>>>,
}

impl HnswIndex {
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Neighbour list of `node` on `level` (empty above the node's level).
    pub fn neighbors(&self, node: usize, level: usize) -> &[u32] {
        self.links[node].get(level).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn build(snap: &Snapshot, params: HnswParams) -> Self {
        let n = snap.len();
        let mut idx = Self {
            revision: snap.revision,
            params,
            entry: None,
            max_level: 0,
            links: vec![Vec::new(); n],
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| snap.key(*a).cmp(snap.key(*b)));
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let ml = 1.0 / (params.max_degree.max(2) as f64).ln();
        let mut visited = Visited::new(n);
        for slot in order {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let level = ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL);
            idx.insert(snap, slot as u32, level, &mut visited);
        }
        idx
    }

    fn degree_cap(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.params.max_degree
        } else {
            self.params.max_degree
        }
    }

    fn dist(snap: &Snapshot, q: &Query<'_>, id: u32) -> f64 {
        -snap.score(q.v, q.norm, id as usize)
    }

    fn node_query(snap: &Snapshot, id: u32) -> Query<'_> {
        Query {
            v: snap.vector(id as usize),
            norm: snap.norm(id as usize),
        }
    }

    fn greedy(&self, snap: &Snapshot, q: &Query<'_>, mut cur: Near, level: usize) -> Near {
        loop {
            let mut changed = false;
            for &nb in self.neighbors(cur.id as usize, level) {
                let d = Self::dist(snap, q, nb);
                if d < cur.d {
                    cur = Near { d, id: nb };
                    changed = true;
                }
            }
            if !changed {
                return cur;
            }
        }
    }

    /// Beam search on one layer. Only nodes accepted by `filter` enter the
    /// result set, but every node can be traversed. Returns ascending distance.
    #[allow(clippy::too_many_arguments)]
    fn search_layer(
        &self,
        snap: &Snapshot,
        q: &Query<'_>,
        eps: &[Near],
        ef: usize,
        level: usize,
        filter: Option<&dyn Fn(u32) -> bool>,
        visited: &mut Visited,
    ) -> Vec<Near> {
        visited.reset();
        let accept = |id: u32| filter.is_none_or(|f| f(id));
        let mut candidates: BinaryHeap<Reverse<Near>> = BinaryHeap::new();
        let mut results: BinaryHeap<Near> = BinaryHeap::new();
        for &ep in eps {
            if visited.insert(ep.id) {
                candidates.push(Reverse(ep));
                if accept(ep.id) {
                    results.push(ep);
                }
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(Reverse(c)) = candidates.pop() {
            if results.len() >= ef && results.peek().is_some_and(|w| c.d > w.d) {
                break;
            }
            for &nb in self.neighbors(c.id as usize, level) {
                if !visited.insert(nb) {
                    continue;
                }
                let d = Self::dist(snap, q, nb);
                let worst = results.peek().map(|w| w.d);
                if results.len() < ef || worst.is_some_and(|w| d < w) {
                    candidates.push(Reverse(Near { d, id: nb }));
                    if accept(nb) {
                        results.push(Near { d, id: nb });
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    /// Neighbour selection heuristic: keep a candidate only if it is closer
    /// to the base than to any already selected neighbour, then top up with
    /// the pruned ones. `cands` must be sorted by ascending distance.
    fn select(snap: &Snapshot, cands: &[Near], m: usize) -> Vec<u32> {
        let mut selected: Vec<u32> = Vec::with_capacity(m);
        let mut pruned: Vec<u32> = Vec::new();
        for c in cands {
            if selected.len() >= m {
                break;
            }
            let cq = Self::node_query(snap, c.id);
            let diverse = selected.iter().all(|&r| Self::dist(snap, &cq, r) > c.d);
            if diverse {
                selected.push(c.id);
            } else {
                pruned.push(c.id);
            }
        }
        for p in pruned.into_iter() {
            if selected.len() >= m {
                break;
            }
            selected.push(p);
        }
        selected
    }

    fn insert(&mut self, snap: &Snapshot, id: u32, level: usize, visited: &mut Visited) {
        self.links[id as usize] = vec![Vec::new(); level + 1];
        let Some(entry) = self.entry else {
            self.entry = Some(id);
            self.max_level = level;
            return;
        };
        let q = Self::node_query(snap, id);
        let mut cur = Near {
            d: Self::dist(snap, &q, entry),
            id: entry,
        };
        for lc in (level + 1..=self.max_level).rev() {
            cur = self.greedy(snap, &q, cur, lc);
        }
                let mut eps = vec![cur];
        for lc in (0..=level.min(self.max_level)).rev() {
            let w = self.search_layer(snap, &q, &eps, self.params.ef_construction, lc, None, visited);
            let m = self.degree_cap(lc);
            let chosen = Self::select(snap, &w, m);
            for &nb in &chosen {
                let list = &mut self.links[nb as usize][lc];
                list.push(id);
                if list.len() > m {
                    let nq = Self::node_query(snap, nb);
                    let mut cands: Vec<Near> = list
                        .iter()
                        .map(|&x| Near {
                            d: Self::dist(snap, &nq, x),
                            id: x,
                        })
                        .collect();
                    cands.sort();
                    self.links[nb as usize][lc] = Self::select(snap, &cands, m);
                }
            }
            self.links[id as usize][lc] = chosen;
            eps = w;
        }
        if level > self.max_level {
            self.entry = Some(id);
            self.max_level = level;
        }
    }

    /// Approximate top-k; results carry exact scores and the usual ordering.
    pub fn search(&self, snap: &Snapshot, query: &[f32], k: usize, tags: &[String]) -> Vec<SearchResult> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let q = Query { v: query, norm: norm(query) };
        let mut cur = Near {
            d: Self::dist(snap, &q, entry),
            id: entry,
        };
        for lc in (1..=self.max_level).rev() {
            cur = self.greedy(snap, &q, cur, lc);
        }
        let ef = self.params.ef_search.max(k);
        let mut visited = Visited::new(snap.len());
        let filter = |id: u32| snap.has_tags(id as usize, tags);
        let filter: Option<&dyn Fn(u32) -> bool> = if tags.is_empty() { None } else { Some(&filter) };
        let found = self.search_layer(snap, &q, &[cur], ef, 0, filter, &mut visited);
        let mut out = finish(
            found
                .into_iter()
                .map(|n| (snap.score(query, q.norm, n.id as usize), snap.key(n.id as usize).to_string())),
        );
        out.truncate(k);
        out
    }
}
