//! Online mutations: single adds in three cost variants, delayed insertion
//! through a byte-bounded buffer, and soft deletes.
//!
//! Mutations go to an [`OverlayGraph`] of replacement adjacency lists over
//! the frozen CSR; [`OverlayGraph::compact`] refreezes.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{embed_items, insert_linked, BuildParams, LinkOracle, LinkParams, Selection};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyGraph, DeleteSet, GraphMut, GraphView, PrunedGraph};
use crate::items::ItemStore;
use crate::scored::{Scored, VisitedSet};
use crate::vectors::{EmbeddingProvider, Metric, Vector};

/// Deleted fraction at which [`DeleteOutcome::advisory`] fires.
pub const DEFAULT_REBUILD_THRESHOLD: f64 = 0.05;

/// Bytes charged per cached distance: two ids and the value.
pub const DISTANCE_ENTRY_BYTES: usize = 12;

#[derive(Debug, Clone)]
enum Undo {
    List { key: (u32, u8), prev: Option<Vec<u32>> },
    Node { prev_entry: Option<u32> },
}

/// Adjacency-list overlay over a frozen graph.
#[derive(Debug, Clone)]
pub struct OverlayGraph {
    base: PrunedGraph,
    levels: Vec<u8>,
    lists: HashMap<(u32, u8), Vec<u32>>,
    entry: Option<u32>,
    deleted: DeleteSet,
    journal: Option<Vec<Undo>>,
}

impl OverlayGraph {
    pub fn new(base: PrunedGraph) -> Self {
        Self {
            levels: base.levels().to_vec(),
            entry: base.entry_point(),
            deleted: base.deleted().clone(),
            base,
            lists: HashMap::new(),
            journal: None,
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn base(&self) -> &PrunedGraph {
        &self.base
    }

    /// True when the overlay differs from its base.
    pub fn is_dirty(&self) -> bool {
        !self.lists.is_empty() || self.len() != self.base.len() || &self.deleted != self.base.deleted()
    }

    pub fn deleted(&self) -> &DeleteSet {
        &self.deleted
    }

    pub fn mark_deleted(&mut self, id: u32) -> Result<bool> {
        if id as usize >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "node {id} out of range (n = {})",
                self.len()
            )));
        }
        Ok(self.deleted.insert(id))
    }

    pub fn deleted_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.deleted.count() as f64 / self.len() as f64
        }
    }

    /// Refreezes base plus overlay into a compact graph.
    pub fn compact(&self) -> PrunedGraph {
        let mut g = AdjacencyGraph::new(self.base.max_degree());
        for &l in &self.levels {
            g.push_node(l as usize);
        }
        for v in 0..self.len() as u32 {
            for l in 0..=self.level(v) {
                g.set_neighbors(v, l, self.neighbors(v, l).to_vec());
            }
        }
        g.set_entry(self.entry);
        *g.deleted_mut() = self.deleted.clone();
        g.freeze()
    }

    /// Starts recording undo information.
    fn begin(&mut self) {
        self.journal = Some(Vec::new());
    }

    fn commit(&mut self) {
        self.journal = None;
    }

    fn rollback(&mut self) {
        let Some(journal) = self.journal.take() else {
            return;
        };
        for u in journal.into_iter().rev() {
            match u {
                Undo::List { key, prev: Some(prev) } => {
                    self.lists.insert(key, prev);
                }
                Undo::List { key, prev: None } => {
                    self.lists.remove(&key);
                }
                Undo::Node { prev_entry } => {
                    let id = self.levels.len() as u32 - 1;
                    for l in 0..=self.levels[id as usize] {
                        self.lists.remove(&(id, l));
                    }
                    self.levels.pop();
                    self.deleted.pop();
                    self.entry = prev_entry;
                }
            }
        }
    }

    fn record(&mut self, u: Undo) {
        if let Some(j) = self.journal.as_mut() {
            j.push(u);
        }
    }
}

impl PartialEq for OverlayGraph {
    fn eq(&self, other: &Self) -> bool {
        self.compact() == other.compact()
    }
}

impl GraphView for OverlayGraph {
    fn node_count(&self) -> usize {
        self.len()
    }
    fn entry_point(&self) -> Option<u32> {
        self.entry
    }
    fn top_level(&self) -> usize {
        self.entry.map_or(0, |e| self.levels[e as usize] as usize)
    }
    fn level(&self, id: u32) -> usize {
        self.levels[id as usize] as usize
    }
    #[inline]
    fn neighbors(&self, id: u32, level: usize) -> &[u32] {
        if let Some(list) = self.lists.get(&(id, level as u8)) {
            return list;
        }
        if (id as usize) < self.base.len() {
            self.base.neighbors(id, level)
        } else {
            &[]
        }
    }
    fn is_deleted(&self, id: u32) -> bool {
        self.deleted.contains(id)
    }
    fn max_degree(&self) -> usize {
        self.base.max_degree()
    }
}

impl GraphMut for OverlayGraph {
    fn push_node(&mut self, level: usize) -> u32 {
        assert!(level < u8::MAX as usize, "level too large");
        let id = self.levels.len() as u32;
        self.record(Undo::Node { prev_entry: self.entry });
        self.levels.push(level as u8);
        self.deleted.push(false);
        match self.entry {
            None => self.entry = Some(id),
            Some(e) if level > self.levels[e as usize] as usize => self.entry = Some(id),
            _ => {}
        }
        id
    }

    fn set_neighbors(&mut self, id: u32, level: usize, list: Vec<u32>) {
        let key = (id, level as u8);
        let prev = self.lists.insert(key, list);
        self.record(Undo::List { key, prev });
    }
}

/// Cost tier of an add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AddVariant {
    /// Relative-neighborhood selection, every distance computed afresh.
    Naive,
    /// As `Naive`, with every pairwise distance of the add memoized.
    Cached,
    /// Random neighbor selection and random drops on overflow.
    #[default]
    Simplified,
}

impl AddVariant {
    pub const ALL: [AddVariant; 3] = [AddVariant::Naive, AddVariant::Cached, AddVariant::Simplified];

    pub fn name(self) -> &'static str {
        match self {
            AddVariant::Naive => "naive",
            AddVariant::Cached => "cached",
            AddVariant::Simplified => "simplified",
        }
    }
}

impl fmt::Display for AddVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AddVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AddVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown add variant {s:?}")))
    }
}

/// Work counters of one or more adds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddCost {
    pub distance_computations: u64,
    pub embedding_computations: u64,
}

impl std::ops::AddAssign for AddCost {
    fn add_assign(&mut self, o: Self) {
        self.distance_computations += o.distance_computations;
        self.embedding_computations += o.embedding_computations;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddParams {
    pub max_degree: usize,
    pub ef_construction: usize,
    pub seed: u64,
    pub metric: Metric,
}

impl AddParams {
    pub fn from_build(p: &BuildParams) -> Self {
        Self {
            max_degree: p.max_degree,
            ef_construction: p.ef_construction,
            seed: p.seed,
            metric: p.metric,
        }
    }
}

const ADD_LEVEL_SALT: u64 = 0x4144_444C_4556;

/// Level of an added node, drawn from a stream seeded by `(seed, id)` with
/// the same geometric law as the build.
pub fn draw_level(seed: u64, id: u32, max_degree: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ADD_LEVEL_SALT ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let p = 1.0 / max_degree.max(2) as f64;
    let mut l = 0;
    while l < 16 && rng.gen::<f64>() < p {
        l += 1;
    }
    l
}

/// Distances between existing nodes, shared across the adds of a drain.
#[derive(Debug, Clone, Default)]
pub struct DistanceCache {
    map: HashMap<(u32, u32), f32>,
}

impl DistanceCache {
    pub fn len(&self) -> usize {
        self.map.len()
    }
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
    pub fn bytes(&self) -> usize {
        self.map.len() * DISTANCE_ENTRY_BYTES
    }
    pub fn clear(&mut self) {
        self.map.clear();
    }
}

/// Where existing nodes' embeddings come from during an add.
pub struct AddContext<'a> {
    pub items: &'a ItemStore,
    pub provider: &'a dyn EmbeddingProvider,
    /// Embeddings already in memory (buffered items), consulted first.
    pub held: Option<&'a HashMap<u32, Vector>>,
}

enum Memo<'c> {
    Off,
    Local(HashMap<(u32, u32), f32>),
    Shared(&'c mut DistanceCache),
}

struct AddOracle<'a, 'c> {
    ctx: &'a AddContext<'a>,
    metric: Metric,
    v: u32,
    fresh: &'a [f32],
    local: HashMap<u32, Vector>,
    memo: Memo<'c>,
    cost: AddCost,
    error: Option<Error>,
}

impl AddOracle<'_, '_> {
    fn load(&mut self, id: u32) -> bool {
        if id == self.v || self.local.contains_key(&id) {
            return true;
        }
        if let Some(v) = self.ctx.held.and_then(|h| h.get(&id)) {
            self.local.insert(id, v.clone());
            return true;
        }
        match embed_items(self.ctx.items, &[id], self.ctx.provider, self.metric) {
            Ok(mut v) => {
                self.cost.embedding_computations += 1;
                self.local.insert(id, v.pop().expect("one row"));
                true
            }
            Err(e) => {
                self.error = Some(e);
                false
            }
        }
    }

    fn row(&self, id: u32) -> &[f32] {
        if id == self.v {
            self.fresh
        } else {
            &self.local[&id]
        }
    }
}

impl LinkOracle for AddOracle<'_, '_> {
    fn distance(&mut self, a: u32, b: u32) -> f32 {
        if self.error.is_some() {
            return f32::INFINITY;
        }
        let key = (a.min(b), a.max(b));
        let hit = match &self.memo {
            Memo::Off => None,
            Memo::Local(m) => m.get(&key).copied(),
            Memo::Shared(c) => c.map.get(&key).copied(),
        };
        if let Some(d) = hit {
            return d;
        }
        if !self.load(a) || !self.load(b) {
            return f32::INFINITY;
        }
        let d = self.metric.eval(self.row(a), self.row(b));
        self.cost.distance_computations += 1;
        match &mut self.memo {
            Memo::Off => {}
            Memo::Local(m) => {
                m.insert(key, d);
            }
            Memo::Shared(c) => {
                c.map.insert(key, d);
            }
        }
        d
    }
}

/// Inserts the node whose prepared embedding is `vector` as the next id of
/// `g`. Counts only work on existing nodes; the caller embeds `vector`.
/// On provider failure the graph is left unchanged.
///
/// `shared` replaces the per-add memo with a cache that outlives the add
/// (used by [`AddBuffer`] drains, for any variant).
pub fn add_node(
    g: &mut OverlayGraph,
    ctx: &AddContext<'_>,
    vector: &[f32],
    variant: AddVariant,
    params: &AddParams,
    shared: Option<&mut DistanceCache>,
) -> Result<(u32, AddCost)> {
    if params.max_degree == 0 || params.ef_construction == 0 {
        return Err(Error::InvalidArgument("M and efC must be at least 1".into()));
    }
    let v = g.len() as u32;
    let level = draw_level(params.seed, v, params.max_degree);
    let memo = match (shared, variant) {
        (Some(c), _) => Memo::Shared(c),
        (None, AddVariant::Cached) => Memo::Local(HashMap::new()),
        (None, _) => Memo::Off,
    };
    let mut oracle = AddOracle {
        ctx,
        metric: params.metric,
        v,
        fresh: vector,
        local: HashMap::new(),
        memo,
        cost: AddCost::default(),
        error: None,
    };
    let link = LinkParams {
        base_cap: params.max_degree,
        max_degree: params.max_degree,
        ef_construction: params.ef_construction,
        selection: match variant {
            AddVariant::Simplified => Selection::Random { seed: params.seed },
            _ => Selection::Rng,
        },
    };
    g.begin();
    let mut visited = VisitedSet::default();
    let id = insert_linked(g, level, link, &mut oracle, &mut visited);
    if let Some(e) = oracle.error.take() {
        g.rollback();
        return Err(e);
    }
    g.commit();
    Ok((id, oracle.cost))
}

/// Items embedded but not yet linked into the graph, plus the drain-time
/// distance cache. Pending embeddings and cached distances share one byte
/// budget.
#[derive(Debug, Clone)]
pub struct AddBuffer {
    byte_budget: usize,
    dim: usize,
    pending: Vec<(u32, Vector)>,
    cache: DistanceCache,
}

impl AddBuffer {
    pub fn new(dim: usize, byte_budget: usize) -> Self {
        Self {
            byte_budget,
            dim,
            pending: Vec::new(),
            cache: DistanceCache::default(),
        }
    }

    pub fn byte_budget(&self) -> usize {
        self.byte_budget
    }

    pub fn pending(&self) -> &[(u32, Vector)] {
        &self.pending
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending_bytes(&self) -> usize {
        self.pending.len() * self.dim * 4
    }

    pub fn cache(&self) -> &DistanceCache {
        &self.cache
    }

    pub fn bytes(&self) -> usize {
        self.pending_bytes() + self.cache.bytes()
    }

    /// Whether one more embedding fits without a flush.
    pub fn has_room(&self) -> bool {
        self.bytes() + self.dim * 4 <= self.byte_budget
    }

    /// Queues an embedding. Fails when a single embedding exceeds the budget
    /// or the buffer needs a flush first.
    pub fn push(&mut self, id: u32, v: Vector) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        if self.dim * 4 > self.byte_budget {
            return Err(Error::InvalidArgument(format!(
                "buffer budget of {} bytes cannot hold one {}-byte embedding",
                self.byte_budget,
                self.dim * 4
            )));
        }
        if !self.has_room() {
            return Err(Error::InvalidArgument("add buffer is full; drain first".into()));
        }
        self.pending.push((id, v));
        Ok(())
    }

    /// Exact distances from `q` to every pending item, ascending.
    pub fn scan(&self, q: &[f32], metric: Metric) -> Vec<Scored> {
        let mut out: Vec<Scored> = self
            .pending
            .iter()
            .map(|(id, v)| Scored::new(metric.eval(q, v), *id))
            .collect();
        out.sort();
        out
    }

    /// Links every pending item into `g` in order with the simplified
    /// variant, reusing the buffered embeddings and the shared distance
    /// cache. The cache is cleared whenever the budget is reached. Items
    /// already linked stay linked if a later one fails.
    pub fn drain(
        &mut self,
        g: &mut OverlayGraph,
        items: &ItemStore,
        provider: &dyn EmbeddingProvider,
        params: &AddParams,
        mut on_added: impl FnMut(u32, &[f32]) -> Result<()>,
    ) -> Result<AddCost> {
        let held: HashMap<u32, Vector> = self.pending.iter().cloned().collect();
        let ctx = AddContext {
            items,
            provider,
            held: Some(&held),
        };
        let mut total = AddCost::default();
        let mut done = 0;
        let mut outcome = Ok(());
        for (id, v) in &self.pending {
            if g.len() as u32 != *id {
                outcome = Err(Error::InvalidArgument(format!(
                    "buffered item {id} is out of order (graph has {} nodes)",
                    g.len()
                )));
                break;
            }
            let step = add_node(g, &ctx, v, AddVariant::Simplified, params, Some(&mut self.cache))
                .and_then(|(nid, cost)| on_added(nid, v).map(|()| cost));
            match step {
                Ok(cost) => total += cost,
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
            done += 1;
            if self.bytes() > self.byte_budget {
                self.cache.clear();
            }
        }
        self.pending.drain(..done);
        if self.pending.is_empty() {
            self.cache.clear();
        }
        outcome.map(|()| total)
    }
}

/// Top `k` of two result lists under `(distance, id)` order, duplicates
/// removed.
pub fn merge_topk(a: &[Scored], b: &[Scored], k: usize) -> Vec<Scored> {
    let mut all: Vec<Scored> = a.iter().chain(b).copied().collect();
    all.sort();
    all.dedup_by_key(|s| s.id);
    all.truncate(k);
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeleteOutcome {
    pub id: u32,
    /// False when the node was already deleted.
    pub changed: bool,
    pub deleted_fraction: f64,
    /// Set by the delete that brings the deleted fraction to the threshold.
    pub advisory: bool,
}

/// Soft-deletes `id`, emitting an advisory the first time the deleted
/// fraction reaches `threshold`.
pub fn delete(g: &mut OverlayGraph, id: u32, threshold: f64) -> Result<DeleteOutcome> {
    let before = g.deleted_fraction();
    let changed = g.mark_deleted(id)?;
    let after = g.deleted_fraction();
    let advisory = changed && before < threshold && after >= threshold - 1e-12;
    if advisory {
        log::warn!(
            "{:.1}% of nodes are deleted; consider rebuilding the index",
            after * 100.0
        );
    }
    Ok(DeleteOutcome {
        id,
        changed,
        deleted_fraction: after,
        advisory,
    })
}
