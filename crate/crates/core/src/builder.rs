//! Graph construction with high-degree preserving pruning.
//!
//! A build runs two insertion passes over the same item order and level
//! draws. The first uses the uniform degree cap `M` and only serves as a
//! degree oracle; the top `beta` percent of its nodes by degree become hubs.
//! The second pass inserts hubs with up to `M` forward edges and everyone
//! else with up to `m`, while reverse edges may fill any node up to `M`.

use std::collections::BinaryHeap;
use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{degree_stats, AdjacencyGraph, GraphMut, GraphStats, GraphView, PrunedGraph, EDGE_BYTES};
use crate::instrument::{Resident, ResidentTracker};
use crate::items::ItemStore;
use crate::pq::{default_subspaces, PqCodes, PqModel, CENTROIDS};
use crate::scored::{Scored, VisitedSet};
use crate::vectors::{embed_batch, EmbeddingProvider, EmbeddingRequest, Metric, Vector};

/// Reverse-edge backfill factor used by [`profile_max_degree`]: a non-hub
/// node capped at `m` forward edges ends up with about `2m` edges once
/// reverse links are added.
pub const BACKFILL_FACTOR: f64 = 2.0;

const LEVEL_SALT: u64 = 0x5EED_1E7E_1000_0001;
const SELECT_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    /// Construction queue length (efC).
    pub ef_construction: usize,
    /// Degree cap for hubs and for every node's total degree (M).
    pub max_degree: usize,
    /// Forward-edge cap for non-hub nodes (m).
    pub low_degree: usize,
    /// Percentage of nodes kept as hubs (beta).
    pub hub_percent: f64,
    /// Byte budget for stored neighbor ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_bytes: Option<u64>,
    /// Recall floor checked by acceptance runs; informational for the builder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_floor: Option<f64>,
    pub metric: Metric,
    pub seed: u64,
    /// PQ subspaces; `None` applies [`default_subspaces`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pq_subspaces: Option<usize>,
    pub pq_iters: usize,
    pub pq_sample: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            ef_construction: 128,
            max_degree: 30,
            low_degree: 6,
            hub_percent: 2.0,
            budget_bytes: None,
            recall_floor: None,
            metric: Metric::Cosine,
            seed: 0,
            pq_subspaces: None,
            pq_iters: 10,
            pq_sample: 100_000,
        }
    }
}

impl BuildParams {
    /// Sets `M` and derives `m = max(1, M / 5)`; raises efC to at least `M`.
    pub fn with_max_degree(mut self, max_degree: usize) -> Self {
        self.max_degree = max_degree;
        self.low_degree = default_low_degree(max_degree);
        self.ef_construction = self.ef_construction.max(max_degree);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.low_degree == 0 || self.low_degree >= self.max_degree {
            return bad(format!(
                "need 0 < m < M (m = {}, M = {})",
                self.low_degree, self.max_degree
            ));
        }
        if self.max_degree > u16::MAX as usize {
            return bad("M must fit in 16 bits".into());
        }
        if !(self.hub_percent > 0.0 && self.hub_percent <= 100.0) {
            return bad(format!("beta must be in (0, 100], got {}", self.hub_percent));
        }
        if self.ef_construction < self.max_degree {
            return bad(format!(
                "efC ({}) must be >= M ({})",
                self.ef_construction, self.max_degree
            ));
        }
        if self.pq_iters > 10_000 || self.pq_sample == 0 {
            return bad("unreasonable PQ training settings".into());
        }
        Ok(())
    }
}

pub fn default_low_degree(max_degree: usize) -> usize {
    (max_degree / 5).max(1)
}

/// Pairwise distances between node ids, including the node being inserted.
pub trait LinkOracle {
    fn distance(&mut self, a: u32, b: u32) -> f32;
}

/// Oracle over vectors held in memory for the duration of a build.
pub struct HeldVectors<'a> {
    pub vectors: &'a [Vector],
    pub metric: Metric,
}

impl LinkOracle for HeldVectors<'_> {
    #[inline]
    fn distance(&mut self, a: u32, b: u32) -> f32 {
        self.metric
            .eval(&self.vectors[a as usize], &self.vectors[b as usize])
    }
}

/// Relative-neighborhood selection. `candidates` must be sorted ascending by
/// distance to the target. A candidate `x` is kept iff no already kept `y`
/// satisfies `dist(x, y) < dist(x, target)`; selection stops at `cap`.
pub fn rng_shrink(
    candidates: &[Scored],
    cap: usize,
    mut dist: impl FnMut(u32, u32) -> f32,
) -> Vec<u32> {
    let mut kept: Vec<u32> = Vec::with_capacity(cap.min(candidates.len()));
    for x in candidates {
        if kept.len() >= cap {
            break;
        }
        if kept.iter().all(|&y| dist(x.id, y) >= x.dist) {
            kept.push(x.id);
        }
    }
    kept
}

/// Sorts `ids` by distance to `target` through the oracle, then applies
/// [`rng_shrink`].
pub(crate) fn shrink_list<O: LinkOracle + ?Sized>(
    target: u32,
    ids: &[u32],
    cap: usize,
    oracle: &mut O,
) -> Vec<u32> {
    let mut scored: Vec<Scored> = ids
        .iter()
        .map(|&x| Scored::new(oracle.distance(target, x), x))
        .collect();
    scored.sort();
    rng_shrink(&scored, cap, |a, b| oracle.distance(a, b))
}

/// Best-first search restricted to one level, returning up to `ef` nodes
/// ascending by `(distance, id)`.
pub(crate) fn search_layer<G: GraphView + ?Sized>(
    g: &G,
    entries: &[Scored],
    ef: usize,
    level: usize,
    mut dist: impl FnMut(u32) -> f32,
    visited: &mut VisitedSet,
) -> Vec<Scored> {
    visited.reset(g.node_count());
    let mut cand: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
    let mut res: BinaryHeap<Scored> = BinaryHeap::new();
    for &e in entries {
        if visited.insert(e.id) {
            cand.push(Reverse(e));
            res.push(e);
        }
    }
    while res.len() > ef {
        res.pop();
    }
    while let Some(Reverse(c)) = cand.pop() {
        if res.len() >= ef && c > *res.peek().expect("non-empty") {
            break;
        }
        for &u in g.neighbors(c.id, level) {
            if !visited.insert(u) {
                continue;
            }
            let d = Scored::new(dist(u), u);
            if res.len() < ef || d < *res.peek().expect("non-empty") {
                cand.push(Reverse(d));
                res.push(d);
                if res.len() > ef {
                    res.pop();
                }
            }
        }
    }
    let mut out = res.into_vec();
    out.sort();
    out
}

/// How a node's neighbors are chosen from its candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Relative-neighborhood rule, both for forward and overflowing reverse lists.
    Rng,
    /// Uniform random subset, seeded per inserted node.
    Random { seed: u64 },
}

pub(crate) fn node_rng(seed: u64, node: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (node as u64 + 1).wrapping_mul(SELECT_SALT))
}

fn random_subset(ids: &[u32], cap: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    if ids.len() <= cap {
        return ids.to_vec();
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, ids.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| ids[i]).collect()
}

/// Parameters of a single insertion.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinkParams {
    pub base_cap: usize,
    pub max_degree: usize,
    pub ef_construction: usize,
    pub selection: Selection,
}

/// Appends a node at `level` and links it into `g`: search from the entry
/// point with queue `efC`, select up to `base_cap` (level 0) or `M` (upper
/// levels) neighbors, add both edge directions and shrink any neighbor that
/// now exceeds `M`.
pub(crate) fn insert_linked<G: GraphMut + ?Sized, O: LinkOracle + ?Sized>(
    g: &mut G,
    level: usize,
    p: LinkParams,
    oracle: &mut O,
    visited: &mut VisitedSet,
) -> u32 {
    let prev_entry = g.entry_point();
    let prev_top = g.top_level();
    let v = g.push_node(level);
    let Some(ep) = prev_entry else {
        return v;
    };
    let mut rng = match p.selection {
        Selection::Random { seed } => Some(node_rng(seed, v)),
        Selection::Rng => None,
    };
    let mut cur = vec![Scored::new(oracle.distance(v, ep), ep)];
    for l in ((level + 1)..=prev_top).rev() {
        cur = search_layer(g, &cur, 1, l, |x| oracle.distance(v, x), visited);
    }
    for l in (0..=level.min(prev_top)).rev() {
        let w = search_layer(g, &cur, p.ef_construction, l, |x| oracle.distance(v, x), visited);
        let cap = if l == 0 { p.base_cap } else { p.max_degree };
        let ids: Vec<u32> = w.iter().map(|s| s.id).collect();
        let selected = match rng.as_mut() {
            None => shrink_list(v, &ids, cap, oracle),
            Some(r) => random_subset(&ids, cap, r),
        };
        for &u in &selected {
            let mut list = Vec::with_capacity(p.max_degree + 1);
            list.extend_from_slice(g.neighbors(u, l));
            list.push(v);
            if list.len() > p.max_degree {
                list = match rng.as_mut() {
                    None => shrink_list(u, &list, p.max_degree, oracle),
                    Some(r) => random_subset(&list, p.max_degree, r),
                };
            }
            g.set_neighbors(u, l, list);
        }
        g.set_neighbors(v, l, selected);
        cur = w;
    }
    v
}

/// Draws hierarchy levels in item order: a node climbs one more level with
/// probability `1/M`, i.e. a geometric law with normalization `1/ln(M)`.
pub fn assign_levels(n: usize, max_degree: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ LEVEL_SALT);
    let p = 1.0 / max_degree.max(2) as f64;
    (0..n)
        .map(|_| {
            let mut l = 0u8;
            while l < 16 && rng.gen::<f64>() < p {
                l += 1;
            }
            l
        })
        .collect()
}

/// High-degree node set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HubSet {
    ids: Vec<u32>,
    flags: Vec<bool>,
}

impl HubSet {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }
    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
    #[inline]
    pub fn contains(&self, id: u32) -> bool {
        self.flags.get(id as usize).copied().unwrap_or(false)
    }

    /// Restricts the set to `ids`, renumbered to their positions.
    pub fn project(&self, ids: &[u32]) -> HubSet {
        let flags: Vec<bool> = ids.iter().map(|&g| self.contains(g)).collect();
        let ids = (0..flags.len() as u32).filter(|&i| flags[i as usize]).collect();
        HubSet { ids, flags }
    }
}

/// `ceil(beta * n / 100)`.
pub fn hub_count(beta: f64, n: usize) -> usize {
    let raw = beta * n as f64 / 100.0;
    // absorb representation error such as 2.0000000000000004
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Top `ceil(beta * n / 100)` nodes by degree, ties to the lower id.
pub fn select_hubs(degrees: &[usize], beta: f64) -> HubSet {
    let n = degrees.len();
    let k = hub_count(beta, n);
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| degrees[b as usize].cmp(&degrees[a as usize]).then(a.cmp(&b)));
    let mut ids: Vec<u32> = order[..k].to_vec();
    ids.sort_unstable();
    let mut flags = vec![false; n];
    for &i in &ids {
        flags[i as usize] = true;
    }
    HubSet { ids, flags }
}

/// Inserts every vector in order.
pub fn construct(
    vectors: &[Vector],
    levels: &[u8],
    params: &BuildParams,
    hubs: Option<&HubSet>,
) -> AdjacencyGraph {
    let mut g = AdjacencyGraph::new(params.max_degree);
    let mut oracle = HeldVectors {
        vectors,
        metric: params.metric,
    };
    let mut visited = VisitedSet::new(vectors.len());
    for (i, &lv) in levels.iter().enumerate().take(vectors.len()) {
        let base_cap = match hubs {
            Some(h) if !h.contains(i as u32) => params.low_degree,
            _ => params.max_degree,
        };
        let p = LinkParams {
            base_cap,
            max_degree: params.max_degree,
            ef_construction: params.ef_construction,
            selection: Selection::Rng,
        };
        insert_linked(&mut g, lv as usize, p, &mut oracle, &mut visited);
    }
    g
}

/// Largest `M` whose predicted metadata fits `budget` bytes, with `m = max(1, M/5)`.
///
/// Predicted average degree is `beta/100 * M + (1 - beta/100) * c * m` with
/// `c = BACKFILL_FACTOR`.
pub fn profile_max_degree(n: usize, budget: u64, beta: f64) -> Result<(usize, usize)> {
    let minimum = 2 * EDGE_BYTES * n as u64;
    if budget < minimum || n == 0 {
        return Err(Error::BudgetInfeasible { budget, minimum });
    }
    if !(beta > 0.0 && beta <= 100.0) {
        return Err(Error::InvalidArgument(format!("beta must be in (0, 100], got {beta}")));
    }
    let frac = beta / 100.0;
    let predicted = |m_big: usize| {
        let m = default_low_degree(m_big) as f64;
        let avg = frac * m_big as f64 + (1.0 - frac) * BACKFILL_FACTOR * m;
        avg * n as f64 * EDGE_BYTES as f64
    };
    let mut best = None;
    for m_big in 2..=u16::MAX as usize {
        if predicted(m_big) <= budget as f64 + 1e-6 {
            best = Some(m_big);
        } else {
            break;
        }
    }
    let m_big = best.ok_or(Error::BudgetInfeasible { budget, minimum })?;
    Ok((m_big, default_low_degree(m_big)))
}

/// Re-shrinks lists at caps `M-1, M-2, ...` until the graph fits `budget`.
/// Returns the final cap when trimming was needed.
pub fn trim_to_budget(
    g: &mut AdjacencyGraph,
    vectors: &[Vector],
    metric: Metric,
    budget: u64,
) -> Result<Option<usize>> {
    let mut bytes = degree_stats(g).metadata_bytes;
    if bytes <= budget {
        return Ok(None);
    }
    let mut oracle = HeldVectors { vectors, metric };
    let mut cap = g.max_degree();
    while bytes > budget {
        if cap <= 1 {
            return Err(Error::BudgetInfeasible {
                budget,
                minimum: bytes,
            });
        }
        cap -= 1;
        for v in 0..g.len() as u32 {
            for l in 0..=g.level(v) {
                if g.neighbors(v, l).len() > cap {
                    let old = g.neighbors(v, l).to_vec();
                    let new = shrink_list(v, &old, cap, &mut oracle);
                    g.set_neighbors(v, l, new);
                }
            }
        }
        bytes = degree_stats(g).metadata_bytes;
    }
    Ok(Some(cap))
}

/// Result of the two-pass graph construction.
#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub graph: PrunedGraph,
    /// Pass-1 graph built at uniform cap `M`.
    pub unpruned: PrunedGraph,
    pub hubs: HubSet,
    pub degrees: Vec<usize>,
    pub trimmed_cap: Option<usize>,
}

/// Pass-1 degree oracle over held vectors.
pub fn reference_degrees(vectors: &[Vector], levels: &[u8], params: &BuildParams) -> (AdjacencyGraph, Vec<usize>) {
    let g = construct(vectors, levels, params, None);
    let deg = (0..g.len() as u32).map(|v| g.neighbors(v, 0).len()).collect();
    (g, deg)
}

/// Two-pass build over vectors already in memory. `hubs` overrides the
/// pass-1 selection (used when degrees are aggregated across shards).
pub fn build_graph(vectors: &[Vector], params: &BuildParams) -> Result<GraphBuild> {
    params.validate()?;
    let levels = assign_levels(vectors.len(), params.max_degree, params.seed);
    let (unpruned, degrees) = reference_degrees(vectors, &levels, params);
    let hubs = select_hubs(&degrees, params.hub_percent);
    build_with_hubs(vectors, &levels, params, unpruned.freeze(), degrees, hubs)
}

pub(crate) fn build_with_hubs(
    vectors: &[Vector],
    levels: &[u8],
    params: &BuildParams,
    unpruned: PrunedGraph,
    degrees: Vec<usize>,
    hubs: HubSet,
) -> Result<GraphBuild> {
    let mut g = construct(vectors, levels, params, Some(&hubs));
    let trimmed_cap = match params.budget_bytes {
        Some(b) => trim_to_budget(&mut g, vectors, params.metric, b)?,
        None => None,
    };
    Ok(GraphBuild {
        graph: g.freeze(),
        unpruned,
        hubs,
        degrees,
        trimmed_cap,
    })
}

/// Validates a provider output and brings it into the metric's canonical
/// form (unit norm for cosine).
pub fn prepare_vector(mut v: Vector, dim: usize, metric: Metric) -> Result<Vector> {
    crate::vectors::check_vector(&v, dim)?;
    if metric == Metric::Cosine {
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidArgument(
                "zero vector cannot be indexed under the cosine metric".into(),
            ));
        }
        crate::vectors::normalize(&mut v);
    }
    Ok(v)
}

/// Embeds items `ids` through `provider`, validated and normalized.
pub fn embed_items(
    items: &ItemStore,
    ids: &[u32],
    provider: &dyn EmbeddingProvider,
    metric: Metric,
) -> Result<Vec<Vector>> {
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(ids.len());
    let chunk = provider.max_batch().max(1);
    for block in ids.chunks(chunk) {
        let reqs: Vec<EmbeddingRequest> = block
            .iter()
            .map(|&id| {
                let content = items
                    .get(id)
                    .ok_or_else(|| Error::InvalidArgument(format!("item {id} missing")))?;
                Ok(EmbeddingRequest::new(id as u64, content))
            })
            .collect::<Result<_>>()?;
        let vs = embed_batch(provider, &reqs).map_err(|e| Error::BuildNode {
            node: block[0] as usize,
            source: Box::new(e),
        })?;
        for (&id, v) in block.iter().zip(vs) {
            out.push(prepare_vector(v, provider.dim(), metric).map_err(|e| Error::BuildNode {
                node: id as usize,
                source: Box::new(e),
            })?);
        }
    }
    Ok(out)
}

/// Picks the PQ training sample: all rows when `n <= limit`, else a seeded
/// sorted subset. Fewer than 256 rows are repeated cyclically.
pub(crate) fn pq_sample_indices(n: usize, limit: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = if n <= limit {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x50_51);
        let mut v = rand::seq::index::sample(&mut rng, n, limit).into_vec();
        v.sort_unstable();
        v
    };
    if !idx.is_empty() && idx.len() < CENTROIDS {
        let base = idx.clone();
        idx = base.iter().copied().cycle().take(CENTROIDS).collect();
    }
    idx
}

pub(crate) fn train_pq(sample: &[Vector], dim: usize, params: &BuildParams) -> Result<PqModel> {
    let m_pq = params.pq_subspaces.unwrap_or_else(|| default_subspaces(dim));
    PqModel::train(sample, m_pq, params.pq_iters, params.seed ^ 0x7071, params.metric)
}

/// Everything a monolithic build produces.
#[derive(Debug, Clone)]
pub struct BuiltIndex {
    pub graph: PrunedGraph,
    pub pq: PqModel,
    pub codes: PqCodes,
    pub report: BuildReport,
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub unpruned: GraphStats,
    pub pruned: GraphStats,
    pub hubs: usize,
    pub trimmed_cap: Option<usize>,
    pub peak_resident: usize,
    /// Realized `(avg_degree - beta/100 * M) / ((1 - beta/100) * m)`; compare
    /// against [`BACKFILL_FACTOR`].
    pub measured_backfill: f64,
}

pub(crate) fn measured_backfill(pruned: &GraphStats, params: &BuildParams) -> f64 {
    let frac = params.hub_percent / 100.0;
    if frac < 1.0 {
        (pruned.avg_degree - frac * params.max_degree as f64) / ((1.0 - frac) * params.low_degree as f64)
    } else {
        f64::NAN
    }
}

/// Embeds every item, builds the pruned graph, trains PQ and encodes all
/// nodes. Exact embeddings are dropped before returning.
pub fn build_index(
    items: &ItemStore,
    params: &BuildParams,
    provider: &dyn EmbeddingProvider,
    tracker: &ResidentTracker,
) -> Result<BuiltIndex> {
    params.validate()?;
    let n = items.len();
    if n == 0 {
        return Err(Error::Build("cannot build an index over zero items".into()));
    }
    if let Some(b) = params.budget_bytes {
        let minimum = 2 * EDGE_BYTES * n as u64;
        if b < minimum {
            return Err(Error::BudgetInfeasible { budget: b, minimum });
        }
    }
    let ids: Vec<u32> = (0..n as u32).collect();
    let vectors = embed_items(items, &ids, provider, params.metric)?;
    let _held = Resident::hold(tracker, vectors.len());
    let built = build_graph(&vectors, params)?;
    let dim = provider.dim();
    let sample: Vec<Vector> = pq_sample_indices(n, params.pq_sample, params.seed)
        .into_iter()
        .map(|i| vectors[i].clone())
        .collect();
    let pq = train_pq(&sample, dim, params)?;
    drop(sample);
    let codes = PqCodes::encode_all(&pq, &vectors)?;
    drop(vectors);
    let pruned = degree_stats(&built.graph);
    let measured_backfill = measured_backfill(&pruned, params);
    Ok(BuiltIndex {
        report: BuildReport {
            unpruned: degree_stats(&built.unpruned),
            pruned,
            hubs: built.hubs.len(),
            trimmed_cap: built.trimmed_cap,
            peak_resident: tracker.peak(),
            measured_backfill,
        },
        graph: built.graph,
        pq,
        codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::reachable_fraction;
    use crate::vectors::synthetic_embed;

    fn synth(n: usize, dim: usize) -> Vec<Vector> {
        (0..n)
            .map(|i| synthetic_embed(format!("b-{i}").as_bytes(), dim, 1))
            .collect()
    }

    #[test]
    fn rng_rule_prunes_shadowed_candidate() {
        let pts = [[0.0f32, 0.0], [1.0, 0.0], [1.8, 0.0]];
        let d = |a: u32, b: u32| crate::vectors::l2_squared(&pts[a as usize], &pts[b as usize]);
        let cands = [Scored::new(d(0, 1), 1), Scored::new(d(0, 2), 2)];
        assert_eq!(rng_shrink(&cands, 5, d), vec![1]);
    }

    #[test]
    fn rng_single_candidate_kept() {
        assert_eq!(rng_shrink(&[Scored::new(3.0, 7)], 1, |_, _| 0.0), vec![7]);
    }

    #[test]
    fn rng_cap_limits_unpruned_candidates() {
        // target at the origin, three points on the unit circle 120° apart
        let pts: [[f32; 2]; 4] = [
            [0.0, 0.0],
            [1.0, 0.0],
            [-0.5, 0.866_025_4],
            [-0.5, -0.866_025_4],
        ];
        let d = |a: u32, b: u32| crate::vectors::l2_squared(&pts[a as usize], &pts[b as usize]);
        let mut cands: Vec<Scored> = (1..4).map(|i| Scored::new(d(0, i), i)).collect();
        cands.sort();
        // brute-force check of the rule: nobody shadows anybody
        for x in &cands {
            for y in &cands {
                if x.id != y.id {
                    assert!(d(x.id, y.id) >= x.dist);
                }
            }
        }
        let expected: Vec<u32> = cands.iter().take(2).map(|s| s.id).collect();
        assert_eq!(rng_shrink(&cands, 2, d), expected);
    }

    #[test]
    fn hubs_selection() {
        let deg: Vec<usize> = (0..1000).map(|i| (i * 7919) % 1000).collect();
        let h = select_hubs(&deg, 2.0);
        assert_eq!(h.len(), 20);
        let mut expected: Vec<u32> = (0..1000u32).collect();
        expected.sort_by(|&a, &b| deg[b as usize].cmp(&deg[a as usize]).then(a.cmp(&b)));
        let mut top: Vec<u32> = expected[..20].to_vec();
        top.sort_unstable();
        assert_eq!(h.ids(), top.as_slice());
        assert_eq!(select_hubs(&deg, 100.0).len(), 1000);
        // ties: equal degrees resolve to lower ids
        let flat = vec![3usize; 10];
        assert_eq!(select_hubs(&flat, 20.0).ids(), &[0, 1]);
        assert_eq!(hub_count(2.0, 10_000), 200);
        assert_eq!(hub_count(2.0, 1), 1);
    }

    #[test]
    fn first_and_second_insertions() {
        let v = synth(2, 8);
        let params = BuildParams::default().with_max_degree(4);
        let g = construct(&v[..1], &[0], &params, None);
        assert_eq!(g.entry_point(), Some(0));
        assert!(g.neighbors(0, 0).is_empty());
        let g = construct(&v, &[0, 0], &params, None);
        assert_eq!(g.neighbors(0, 0), &[1]);
        assert_eq!(g.neighbors(1, 0), &[0]);
    }

    #[test]
    fn degree_caps_hold() {
        let v = synth(2000, 16);
        let mut params = BuildParams::default().with_max_degree(16);
        params.low_degree = 3;
        params.ef_construction = 64;
        let b = build_graph(&v, &params).unwrap();
        b.graph.validate().unwrap();
        b.unpruned.validate().unwrap();
        let s = degree_stats(&b.graph);
        assert!(s.max_degree <= 16);
        assert!(s.avg_degree < degree_stats(&b.unpruned).avg_degree);
        assert!(reachable_fraction(&b.graph) >= 0.99);
        assert_eq!(b.hubs.len(), 40);
    }

    #[test]
    fn profile_formula() {
        let (m_big, m) = profile_max_degree(1000, 4 * 1000 * 13, 100.0).unwrap();
        assert_eq!((m_big, m), (13, 2));
        assert!(matches!(
            profile_max_degree(1000, 7999, 2.0),
            Err(Error::BudgetInfeasible { minimum: 8000, .. })
        ));
        let (m_big, m) = profile_max_degree(1000, 8000, 2.0).unwrap();
        assert!(m_big >= 2 && m >= 1 && m < m_big);
        // monotone in budget
        let a = profile_max_degree(1000, 40_000, 2.0).unwrap().0;
        let b = profile_max_degree(1000, 80_000, 2.0).unwrap().0;
        assert!(b >= a);
    }

    #[test]
    fn params_validation() {
        let mut p = BuildParams::default();
        assert!(p.validate().is_ok());
        p.low_degree = p.max_degree;
        assert!(p.validate().is_err());
        let p = BuildParams {
            hub_percent: 0.0,
            ..BuildParams::default()
        };
        assert!(p.validate().is_err());
        let p = BuildParams {
            ef_construction: 3,
            ..BuildParams::default()
        };
        assert!(p.validate().is_err());
        assert_eq!(BuildParams::default().with_max_degree(16).low_degree, 3);
        assert_eq!(BuildParams::default().with_max_degree(4).low_degree, 1);
    }

    #[test]
    fn levels_are_geometric_and_pinned() {
        let a = assign_levels(20_000, 16, 3);
        assert_eq!(a, assign_levels(20_000, 16, 3));
        let above = a.iter().filter(|&&l| l >= 1).count() as f64 / 20_000.0;
        assert!((above - 1.0 / 16.0).abs() < 0.01, "{above}");
    }

    #[test]
    fn zero_vector_rejected_under_cosine() {
        assert!(prepare_vector(vec![0.0, 0.0], 2, Metric::Cosine).is_err());
        assert!(prepare_vector(vec![0.0, 0.0], 2, Metric::L2).is_ok());
    }

    #[test]
    fn single_item_index() {
        let items = ItemStore::from_items(["only"]);
        let p = crate::vectors::SyntheticProvider::new(8, 0);
        let params = BuildParams::default().with_max_degree(4);
        let built = build_index(&items, &params, &p, &ResidentTracker::new()).unwrap();
        built.graph.validate().unwrap();
        assert_eq!(built.graph.len(), 1);
        assert_eq!(built.codes.len(), 1);
        assert_eq!(built.graph.entry_point(), Some(0));
    }

    #[test]
    fn budget_trimming_respects_limit() {
        let v = synth(600, 8);
        let mut params = BuildParams::default().with_max_degree(12);
        params.ef_construction = 32;
        let free = build_graph(&v, &params).unwrap();
        let bytes = degree_stats(&free.graph).metadata_bytes;
        // feeding back its own size needs no trimming and reproduces the graph
        params.budget_bytes = Some(bytes);
        let same = build_graph(&v, &params).unwrap();
        assert_eq!(same.trimmed_cap, None);
        assert_eq!(same.graph, free.graph);
        params.budget_bytes = Some(bytes * 2 / 3);
        let trimmed = build_graph(&v, &params).unwrap();
        assert!(trimmed.trimmed_cap.is_some());
        assert!(degree_stats(&trimmed.graph).metadata_bytes <= bytes * 2 / 3);
        trimmed.graph.validate().unwrap();
    }
}
