//! Query engine over a pruned graph whose exact vectors are not stored.
//!
//! Two modes share the same exact queue (EQ): a bounded ascending set of
//! `(exact distance, id)` with visited marks. `ExactBestFirst` computes the
//! exact distance of every newly seen neighbor. `TwoLevel` first scores
//! neighbors with PQ distances into an unbounded approximate queue (AQ) and
//! only recomputes the top `alpha` percent, accumulating them into batches.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::builder::prepare_vector;
use crate::error::{Error, Result};
use crate::graph::GraphView;
use crate::items::ItemStore;
use crate::pq::{PqCodes, PqModel};
use crate::scored::Scored;
use crate::vectors::{embed_batch, EmbeddingProvider, EmbeddingRequest, Metric, Vector};

mod cache;
pub(crate) mod clock;

pub use cache::EmbeddingCache;
use clock::Stopwatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SearchMode {
    #[serde(rename = "exact_bestfirst")]
    ExactBestFirst,
    #[default]
    #[serde(rename = "two_level")]
    TwoLevel,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::ExactBestFirst => "exact_bestfirst",
            SearchMode::TwoLevel => "two_level",
        })
    }
}

impl FromStr for SearchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_bestfirst" | "exact" | "best_first" => Ok(SearchMode::ExactBestFirst),
            "two_level" => Ok(SearchMode::TwoLevel),
            _ => Err(Error::InvalidArgument(format!("unknown search mode {s:?}"))),
        }
    }
}

/// What the re-ranking percentage is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaBase {
    /// The unscheduled entries among the best `ceil(alpha% * |AQ|)` of the
    /// whole approximate queue, which keeps every entry ever inserted.
    #[default]
    Window,
    /// `ceil(alpha% * |AQ entries not yet scheduled|)`, at least one.
    Eligible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub k: usize,
    pub ef: usize,
    /// Re-ranking ratio in percent.
    pub alpha: f64,
    pub batch_threshold: usize,
    pub mode: SearchMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_fraction: Option<f64>,
    #[serde(default)]
    pub alpha_base: AlphaBase,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: 3,
            ef: 50,
            alpha: 30.0,
            batch_threshold: 64,
            mode: SearchMode::TwoLevel,
            cache_fraction: None,
            alpha_base: AlphaBase::Window,
        }
    }
}

impl SearchParams {
    pub fn exact(k: usize, ef: usize) -> Self {
        Self {
            k,
            ef,
            mode: SearchMode::ExactBestFirst,
            batch_threshold: 1,
            ..Self::default()
        }
    }

    pub fn two_level(k: usize, ef: usize, alpha: f64, batch_threshold: usize) -> Self {
        Self {
            k,
            ef,
            alpha,
            batch_threshold,
            mode: SearchMode::TwoLevel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.ef < self.k {
            return Err(Error::InvalidArgument(format!(
                "need ef >= k >= 1 (k = {}, ef = {})",
                self.k, self.ef
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 100.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0, 100], got {}", self.alpha)));
        }
        if self.batch_threshold == 0 {
            return Err(Error::InvalidArgument("batch threshold must be >= 1".into()));
        }
        if let Some(f) = self.cache_fraction {
            if !(f > 0.0 && f <= 100.0) {
                return Err(Error::InvalidArgument(format!("cache fraction must be in (0, 100], got {f}")));
            }
        }
        Ok(())
    }
}

/// Accumulated wall time per query stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub pq_lookup: Duration,
    pub payload_fetch: Duration,
    pub embed: Duration,
    pub distance: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.pq_lookup + self.payload_fetch + self.embed + self.distance
    }

    pub fn add(&mut self, other: &StageTimes) {
        self.pq_lookup += other.pq_lookup;
        self.payload_fetch += other.payload_fetch;
        self.embed += other.embed;
        self.distance += other.distance;
    }

    /// Share of time spent producing exact embeddings (fetch + embed).
    pub fn recompute_share(&self) -> f64 {
        let t = self.total().as_secs_f64();
        if t == 0.0 {
            return 0.0;
        }
        (self.payload_fetch + self.embed).as_secs_f64() / t
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchReport {
    /// Up to `k` active nodes ascending by `(distance, id)`.
    pub results: Vec<Scored>,
    /// Exact embeddings obtained from the source (cache hits excluded).
    pub recomputations: usize,
    pub approx_lookups: usize,
    /// Size of every recompute call; sums to `recomputations`.
    pub batches: Vec<usize>,
    /// Partial batches flushed because EQ ran out of unvisited nodes.
    pub forced_flushes: usize,
    pub cache_hits: usize,
    /// Nodes in the order they were visited on the base level.
    pub visited: Vec<u32>,
    pub stage_times: StageTimes,
}

impl SearchReport {
    pub fn ids(&self) -> Vec<u32> {
        self.results.iter().map(|s| s.id).collect()
    }

    /// `hits / (hits + recomputations)`; zero when nothing was evaluated.
    pub fn cache_hit_rate(&self) -> f64 {
        let total = self.cache_hits + self.recomputations;
        if total == 0 {
            0.0
        } else {
            self.cache_hits as f64 / total as f64
        }
    }
}

/// Where exact vectors come from.
pub trait ExactSource {
    fn metric(&self) -> Metric;
    fn dim(&self) -> usize;

    /// Exact vectors of `ids`, in order.
    fn fetch(&self, ids: &[u32], times: &mut StageTimes) -> Result<Vec<Vector>>;

    /// Exact distances from `q` to `ids`, in order.
    fn distances(&self, q: &[f32], ids: &[u32], times: &mut StageTimes) -> Result<Vec<f32>> {
        let vs = self.fetch(ids, times)?;
        let sw = Stopwatch::start();
        let metric = self.metric();
        let out = vs.iter().map(|v| metric.eval(q, v)).collect();
        times.distance += sw.elapsed();
        Ok(out)
    }
}

/// Recomputes embeddings from item payloads through a provider.
pub struct RecomputeSource<'a> {
    pub items: &'a ItemStore,
    pub provider: &'a dyn EmbeddingProvider,
    pub metric: Metric,
}

impl ExactSource for RecomputeSource<'_> {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn dim(&self) -> usize {
        self.provider.dim()
    }

    fn fetch(&self, ids: &[u32], times: &mut StageTimes) -> Result<Vec<Vector>> {
        let sw = Stopwatch::start();
        let reqs: Vec<EmbeddingRequest> = ids
            .iter()
            .map(|&id| {
                self.items
                    .get(id)
                    .map(|c| EmbeddingRequest::new(id as u64, c))
                    .ok_or_else(|| Error::InvalidArgument(format!("item {id} missing from the store")))
            })
            .collect::<Result<_>>()?;
        times.payload_fetch += sw.elapsed();
        let sw = Stopwatch::start();
        let raw = embed_batch(self.provider, &reqs)?;
        let out = raw
            .into_iter()
            .map(|v| prepare_vector(v, self.provider.dim(), self.metric))
            .collect::<Result<Vec<_>>>();
        times.embed += sw.elapsed();
        out
    }
}

/// Oracle mode: exact vectors held in memory.
pub struct StoredVectors<'a> {
    pub vectors: &'a [Vector],
    pub metric: Metric,
}

impl ExactSource for StoredVectors<'_> {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    fn fetch(&self, ids: &[u32], _times: &mut StageTimes) -> Result<Vec<Vector>> {
        ids.iter()
            .map(|&id| {
                self.vectors
                    .get(id as usize)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("no stored vector for {id}")))
            })
            .collect()
    }

    fn distances(&self, q: &[f32], ids: &[u32], times: &mut StageTimes) -> Result<Vec<f32>> {
        let sw = Stopwatch::start();
        let out = ids
            .iter()
            .map(|&id| {
                self.vectors
                    .get(id as usize)
                    .map(|v| self.metric.eval(q, v))
                    .ok_or_else(|| Error::InvalidArgument(format!("no stored vector for {id}")))
            })
            .collect();
        times.distance += sw.elapsed();
        out
    }
}

/// Bounded ascending queue of exact distances.
struct ExactQueue {
    cap: usize,
    members: BTreeSet<Scored>,
    unvisited: BTreeSet<Scored>,
}

impl ExactQueue {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            members: BTreeSet::new(),
            unvisited: BTreeSet::new(),
        }
    }

    fn try_insert(&mut self, s: Scored) -> bool {
        if self.members.len() >= self.cap {
            let worst = *self.members.last().expect("cap >= 1");
            if s >= worst {
                return false;
            }
            self.members.remove(&worst);
            self.unvisited.remove(&worst);
        }
        self.members.insert(s);
        self.unvisited.insert(s);
        true
    }

    fn pop_unvisited(&mut self) -> Option<Scored> {
        self.unvisited.pop_first()
    }

    fn results<G: GraphView + ?Sized>(&self, g: &G, k: usize) -> Vec<Scored> {
        self.members
            .iter()
            .filter(|s| !g.is_deleted(s.id))
            .take(k)
            .copied()
            .collect()
    }
}

/// Per-query state shared by both modes.
struct Run<'a> {
    q: &'a [f32],
    metric: Metric,
    source: &'a dyn ExactSource,
    cache: Option<&'a EmbeddingCache>,
    report: SearchReport,
}

impl Run<'_> {
    /// Exact distances for `ids`, consulting the cache first. Misses are
    /// recomputed in a single source call.
    fn exact(&mut self, ids: &[u32]) -> Result<Vec<Scored>> {
        let mut out: Vec<Scored> = Vec::with_capacity(ids.len());
        let mut misses: Vec<u32> = Vec::new();
        let mut slots: Vec<usize> = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            match self.cache.and_then(|c| c.get(id)) {
                Some(v) => {
                    let sw = Stopwatch::start();
                    out.push(Scored::new(self.metric.eval(self.q, v), id));
                    self.report.stage_times.distance += sw.elapsed();
                    self.report.cache_hits += 1;
                }
                None => {
                    out.push(Scored::new(f32::NAN, id));
                    misses.push(id);
                    slots.push(i);
                }
            }
        }
        if !misses.is_empty() {
            let ds = self
                .source
                .distances(self.q, &misses, &mut self.report.stage_times)?;
            if ds.len() != misses.len() {
                return Err(Error::Protocol(format!(
                    "source returned {} distances for {} ids",
                    ds.len(),
                    misses.len()
                )));
            }
            self.report.recomputations += misses.len();
            self.report.batches.push(misses.len());
            for (slot, d) in slots.into_iter().zip(ds) {
                out[slot].dist = d;
            }
        }
        Ok(out)
    }
}

const KNOWN: u8 = 1;
const OFFERED: u8 = 2;
const IN_AQ: u8 = 4;
const SCHEDULED: u8 = 8;

fn prepare_query(q: &[f32], dim: usize, metric: Metric) -> Result<Vector> {
    if q.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: q.len(),
        });
    }
    prepare_vector(q.to_vec(), dim, metric)
}

fn finish<G: GraphView + ?Sized>(
    g: &G,
    k: usize,
    eq: &ExactQueue,
    mut run: Run<'_>,
    outcome: Result<()>,
) -> Result<SearchReport> {
    run.report.results = eq.results(g, k);
    match outcome {
        Ok(()) => Ok(run.report),
        Err(e) => Err(Error::Search {
            recomputations: run.report.recomputations,
            partial: Box::new(run.report),
            source: Box::new(e),
        }),
    }
}

/// Best-first search with exact distances for every newly seen neighbor.
///
/// Upper hierarchy levels are descended greedily with exact distances; the
/// base level runs the bounded-queue loop until no unvisited node remains.
pub fn best_first_search<G: GraphView + ?Sized>(
    g: &G,
    q: &[f32],
    params: &SearchParams,
    source: &dyn ExactSource,
    cache: Option<&EmbeddingCache>,
) -> Result<SearchReport> {
    params.validate()?;
    let metric = source.metric();
    let q = prepare_query(q, source.dim(), metric)?;
    let mut run = Run {
        q: &q,
        metric,
        source,
        cache,
        report: SearchReport::default(),
    };
    let mut eq = ExactQueue::new(params.ef);
    let Some(entry) = g.entry_point() else {
        return Ok(run.report);
    };
    let outcome = best_first_inner(g, entry, &mut run, &mut eq);
    finish(g, params.k, &eq, run, outcome)
}

fn best_first_inner<G: GraphView + ?Sized>(
    g: &G,
    entry: u32,
    run: &mut Run<'_>,
    eq: &mut ExactQueue,
) -> Result<()> {
    let n = g.node_count();
    let mut flags = vec![0u8; n];
    let mut dist = vec![0f32; n];
    let mut cur = run.exact(&[entry])?[0];
    flags[entry as usize] |= KNOWN;
    dist[entry as usize] = cur.dist;
    for l in (1..=g.top_level()).rev() {
        loop {
            let fresh: Vec<u32> = g
                .neighbors(cur.id, l)
                .iter()
                .copied()
                .filter(|&v| flags[v as usize] & KNOWN == 0)
                .collect();
            if !fresh.is_empty() {
                for s in run.exact(&fresh)? {
                    flags[s.id as usize] |= KNOWN;
                    dist[s.id as usize] = s.dist;
                }
            }
            let best = g
                .neighbors(cur.id, l)
                .iter()
                .map(|&v| Scored::new(dist[v as usize], v))
                .min();
            match best {
                Some(b) if b < cur => cur = b,
                _ => break,
            }
        }
    }
    flags[cur.id as usize] |= OFFERED;
    eq.try_insert(cur);
    while let Some(u) = eq.pop_unvisited() {
        run.report.visited.push(u.id);
        let nbrs = g.neighbors(u.id, 0);
        let fresh: Vec<u32> = nbrs
            .iter()
            .copied()
            .filter(|&v| flags[v as usize] & KNOWN == 0)
            .collect();
        if !fresh.is_empty() {
            for s in run.exact(&fresh)? {
                flags[s.id as usize] |= KNOWN;
                dist[s.id as usize] = s.dist;
            }
        }
        for &v in nbrs {
            let f = &mut flags[v as usize];
            if *f & OFFERED == 0 {
                *f |= OFFERED;
                eq.try_insert(Scored::new(dist[v as usize], v));
            }
        }
    }
    Ok(())
}

/// Two-level search: PQ distances filter which neighbors get recomputed.
///
/// Upper levels are descended greedily on PQ distances. On the base level,
/// each visit scores new neighbors into AQ, moves the top `alpha` percent
/// (see [`AlphaBase`]) into the pending set C, and recomputes C in batches
/// of exactly `batch_threshold`. When EQ has no unvisited node left while C
/// is non-empty, C is flushed early and the loop continues.
pub fn two_level_search<G: GraphView + ?Sized>(
    g: &G,
    q: &[f32],
    params: &SearchParams,
    source: &dyn ExactSource,
    pq: &PqModel,
    codes: &PqCodes,
    cache: Option<&EmbeddingCache>,
) -> Result<SearchReport> {
    params.validate()?;
    let metric = source.metric();
    let q = prepare_query(q, source.dim(), metric)?;
    if codes.len() < g.node_count() {
        return Err(Error::InvalidArgument(format!(
            "{} PQ codes for {} nodes",
            codes.len(),
            g.node_count()
        )));
    }
    let mut run = Run {
        q: &q,
        metric,
        source,
        cache,
        report: SearchReport::default(),
    };
    let mut eq = ExactQueue::new(params.ef);
    let Some(entry) = g.entry_point() else {
        return Ok(run.report);
    };
    let outcome = two_level_inner(g, entry, params, pq, codes, &mut run, &mut eq);
    finish(g, params.k, &eq, run, outcome)
}

fn two_level_inner<G: GraphView + ?Sized>(
    g: &G,
    entry: u32,
    params: &SearchParams,
    pq: &PqModel,
    codes: &PqCodes,
    run: &mut Run<'_>,
    eq: &mut ExactQueue,
) -> Result<()> {
    let n = g.node_count();
    let sw = Stopwatch::start();
    let adc = pq.adc(run.q)?;
    run.report.stage_times.pq_lookup += sw.elapsed();

    let mut flags = vec![0u8; n];
    let mut approx = vec![0f32; n];
    let approx_of = |v: u32, flags: &mut [u8], approx: &mut [f32], lookups: &mut usize| -> f32 {
        let i = v as usize;
        if flags[i] & KNOWN == 0 {
            flags[i] |= KNOWN;
            approx[i] = adc.distance(codes.code(v));
            *lookups += 1;
        }
        approx[i]
    };

    let sw = Stopwatch::start();
    let mut cur = Scored::new(approx_of(entry, &mut flags, &mut approx, &mut run.report.approx_lookups), entry);
    for l in (1..=g.top_level()).rev() {
        loop {
            let mut best = cur;
            for &v in g.neighbors(cur.id, l) {
                let s = Scored::new(approx_of(v, &mut flags, &mut approx, &mut run.report.approx_lookups), v);
                if s < best {
                    best = s;
                }
            }
            if best == cur {
                break;
            }
            cur = best;
        }
    }
    run.report.stage_times.pq_lookup += sw.elapsed();

    flags[cur.id as usize] |= SCHEDULED;
    let first = run.exact(&[cur.id])?[0];
    eq.try_insert(first);

    let frac = params.alpha / 100.0;
    let threshold = params.batch_threshold;
    let mut eligible: BTreeSet<Scored> = BTreeSet::new();
    let mut window = Window::default();
    let mut pending: Vec<u32> = Vec::new();

    let flush = |run: &mut Run<'_>, eq: &mut ExactQueue, batch: &[u32]| -> Result<()> {
        for s in run.exact(batch)? {
            eq.try_insert(s);
        }
        Ok(())
    };

    loop {
        let Some(u) = eq.pop_unvisited() else {
            if pending.is_empty() {
                break;
            }
            run.report.forced_flushes += 1;
            let batch = std::mem::take(&mut pending);
            flush(run, eq, &batch)?;
            continue;
        };
        run.report.visited.push(u.id);

        let sw = Stopwatch::start();
        for &v in g.neighbors(u.id, 0) {
            let i = v as usize;
            if flags[i] & (IN_AQ | SCHEDULED) != 0 {
                continue;
            }
            let d = approx_of(v, &mut flags, &mut approx, &mut run.report.approx_lookups);
            flags[i] |= IN_AQ;
            let s = Scored::new(d, v);
            eligible.insert(s);
            if params.alpha_base == AlphaBase::Window {
                window.insert(s);
            }
        }
        run.report.stage_times.pq_lookup += sw.elapsed();

        match params.alpha_base {
            AlphaBase::Eligible => {
                if !eligible.is_empty() {
                    let take = ((frac * eligible.len() as f64).ceil() as usize).clamp(1, eligible.len());
                    for _ in 0..take {
                        let s = eligible.pop_first().expect("counted");
                        flags[s.id as usize] |= SCHEDULED;
                        pending.push(s.id);
                    }
                }
            }
            AlphaBase::Window => {
                if let Some(edge) = window.resize(frac) {
                    while eligible.first().is_some_and(|s| *s <= edge) {
                        let s = eligible.pop_first().expect("checked");
                        flags[s.id as usize] |= SCHEDULED;
                        pending.push(s.id);
                    }
                }
            }
        }

        while pending.len() >= threshold {
            let batch: Vec<u32> = pending.drain(..threshold).collect();
            flush(run, eq, &batch)?;
        }
    }
    Ok(())
}

/// The best `ceil(frac * |AQ|)` entries of an ever-growing AQ, tracked by
/// their largest member so each step costs O(log |AQ|) amortized.
#[derive(Default)]
struct Window {
    all: BTreeSet<Scored>,
    edge: Option<Scored>,
    inside: usize,
}

impl Window {
    fn insert(&mut self, s: Scored) {
        self.all.insert(s);
        if self.edge.is_some_and(|e| s < e) {
            self.inside += 1;
        }
    }

    /// Moves the edge to the new window size and returns it.
    fn resize(&mut self, frac: f64) -> Option<Scored> {
        use std::ops::Bound::{Excluded, Unbounded};
        let n = self.all.len();
        if n == 0 {
            return None;
        }
        let want = ((frac * n as f64).ceil() as usize).clamp(1, n);
        while self.inside > want {
            let e = self.edge.expect("inside > 0");
            self.edge = self.all.range(..e).next_back().copied();
            self.inside -= 1;
        }
        while self.inside < want {
            self.edge = match self.edge {
                None => self.all.first().copied(),
                Some(e) => self.all.range((Excluded(e), Unbounded)).next().copied(),
            };
            self.inside += 1;
        }
        self.edge
    }
}

/// Dispatches on `params.mode`. PQ artifacts are required for two-level mode.
pub fn search<G: GraphView + ?Sized>(
    g: &G,
    q: &[f32],
    params: &SearchParams,
    source: &dyn ExactSource,
    pq: Option<(&PqModel, &PqCodes)>,
    cache: Option<&EmbeddingCache>,
) -> Result<SearchReport> {
    match params.mode {
        SearchMode::ExactBestFirst => best_first_search(g, q, params, source, cache),
        SearchMode::TwoLevel => {
            let (model, codes) = pq.ok_or_else(|| {
                Error::InvalidArgument("two-level search needs PQ codes".into())
            })?;
            two_level_search(g, q, params, source, model, codes, cache)
        }
    }
}

#[cfg(test)]
mod tests;
