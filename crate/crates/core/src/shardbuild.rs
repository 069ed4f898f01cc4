//! Storage-bounded construction. Items are soft-assigned to their two
//! nearest k-means centroids, each shard is built on its own with only that
//! shard's embeddings resident, and the shard graphs are merged by taking
//! the union of every node's lists and randomly dropping edges above `M`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{
    assign_levels, construct, embed_items, measured_backfill, pq_sample_indices, select_hubs, train_pq,
    BuildParams, BuildReport, BuiltIndex, HubSet,
};
use crate::error::{Error, Result};
use crate::graph::{degree_stats, AdjacencyGraph, GraphView, PrunedGraph};
use crate::instrument::{Resident, ResidentTracker};
use crate::items::ItemStore;
use crate::kmeans;
use crate::pq::{PqCodes, PqModel};
use crate::scored::Scored;
use crate::vectors::{EmbeddingProvider, Metric, Vector};

/// Upper bound on the k-means sample.
pub const MAX_SAMPLE: usize = 20_000;
pub const KMEANS_ITERS: usize = 25;

/// Two shards per item: `(primary, secondary)`, equal when `k == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub k_shards: usize,
    pub dim: usize,
    pub centroids: Vec<f32>,
    pub assignment: Vec<(u32, u32)>,
}

impl ShardPlan {
    /// Global ids of shard `s`, ascending.
    pub fn members(&self, s: usize) -> Vec<u32> {
        let s = s as u32;
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a == s || b == s)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn max_shard_size(&self) -> usize {
        (0..self.k_shards).map(|s| self.members(s).len()).max().unwrap_or(0)
    }
}

/// Default sample size: `min(n, 20k, max(256, n / k))`, which keeps the
/// planning peak no larger than one shard.
pub fn default_sample_size(n: usize, k_shards: usize) -> usize {
    n.min(MAX_SAMPLE).min((n / k_shards.max(1)).max(256))
}

fn embed_resident(
    items: &ItemStore,
    ids: &[u32],
    provider: &dyn EmbeddingProvider,
    metric: Metric,
    tracker: &ResidentTracker,
) -> Result<(Vec<Vector>, Resident)> {
    let held = Resident::hold(tracker, ids.len());
    let v = embed_items(items, ids, provider, metric)?;
    Ok((v, held))
}

struct Planned {
    plan: ShardPlan,
    pq: Option<(PqModel, PqCodes)>,
}

#[allow(clippy::too_many_arguments)]
fn plan_inner(
    items: &ItemStore,
    k_shards: usize,
    sample_size: usize,
    provider: &dyn EmbeddingProvider,
    seed: u64,
    tracker: &ResidentTracker,
    pq_params: Option<&BuildParams>,
    metric: Metric,
) -> Result<Planned> {
    let n = items.len();
    if k_shards == 0 {
        return Err(Error::InvalidArgument("need at least one shard".into()));
    }
    if n == 0 {
        return Err(Error::Build("cannot plan shards over zero items".into()));
    }
    if sample_size < k_shards {
        return Err(Error::InvalidArgument(format!(
            "sample size {sample_size} is smaller than the shard count {k_shards}"
        )));
    }
    let dim = provider.dim();
    let sample_ids: Vec<u32> = pq_sample_indices(n, sample_size.min(n), seed)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    let (centroids, pq) = {
        // the cyclic padding only matters for PQ; k-means sees distinct rows
        let mut distinct = sample_ids.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let (rows, _held) = embed_resident(items, &distinct, provider, metric, tracker)?;
        let centroids = if k_shards == 1 {
            vec![0.0; dim]
        } else {
            let flat: Vec<f32> = rows.iter().flatten().copied().collect();
            let k = k_shards.min(rows.len());
            let mut c = kmeans::train(&flat, dim, k, KMEANS_ITERS, seed ^ 0x4B4D);
            c.resize(k_shards * dim, 0.0);
            c
        };
        let pq = match pq_params {
            Some(p) => {
                let pos = |id: u32| distinct.binary_search(&id).expect("sampled");
                let sample: Vec<Vector> = sample_ids.iter().map(|&id| rows[pos(id)].clone()).collect();
                Some(train_pq(&sample, dim, p)?)
            }
            None => None,
        };
        (centroids, pq)
    };
    let mut assignment = Vec::with_capacity(n);
    let mut codes = pq.as_ref().map(|m| PqCodes::new(m.subspaces()));
    let ids: Vec<u32> = (0..n as u32).collect();
    for block in ids.chunks(provider.max_batch().max(1)) {
        let (rows, _held) = embed_resident(items, block, provider, metric, tracker)?;
        for v in &rows {
            let pair = if k_shards == 1 {
                (0, 0)
            } else {
                let (a, b) = kmeans::nearest_two(&centroids, dim, v);
                (a as u32, b as u32)
            };
            assignment.push(pair);
            if let (Some(m), Some(c)) = (pq.as_ref(), codes.as_mut()) {
                c.push(&m.encode(v)?);
            }
        }
    }
    Ok(Planned {
        plan: ShardPlan {
            k_shards,
            dim,
            centroids,
            assignment,
        },
        pq: pq.zip(codes),
    })
}

/// k-means over an embedded sample, then a streaming pass assigning every
/// item to its two nearest centroids.
pub fn plan_shards(
    items: &ItemStore,
    k_shards: usize,
    sample_size: usize,
    provider: &dyn EmbeddingProvider,
    metric: Metric,
    seed: u64,
    tracker: &ResidentTracker,
) -> Result<ShardPlan> {
    Ok(plan_inner(items, k_shards, sample_size, provider, seed, tracker, None, metric)?.plan)
}

/// A shard's graph over local ids plus the local → global map.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardGraph {
    pub graph: PrunedGraph,
    pub global_ids: Vec<u32>,
}

/// Hub-aware construction over one shard. `levels` and `hubs` are indexed by
/// global id.
pub fn build_shard(
    items: &ItemStore,
    global_ids: &[u32],
    params: &BuildParams,
    levels: &[u8],
    hubs: Option<&HubSet>,
    provider: &dyn EmbeddingProvider,
    tracker: &ResidentTracker,
) -> Result<ShardGraph> {
    if global_ids.is_empty() {
        return Err(Error::Build("empty shard".into()));
    }
    let (vectors, _held) = embed_resident(items, global_ids, provider, params.metric, tracker)?;
    let local_levels: Vec<u8> = global_ids.iter().map(|&g| levels[g as usize]).collect();
    let local_hubs = hubs.map(|h| h.project(global_ids));
    let g = construct(&vectors, &local_levels, params, local_hubs.as_ref());
    Ok(ShardGraph {
        graph: g.freeze(),
        global_ids: global_ids.to_vec(),
    })
}

/// Unions the shard graphs into one graph over `n` global ids.
///
/// Each node's level is the highest level it has in any shard; at every
/// level its list is the union of its shard lists in shard order with
/// duplicates removed, and lists longer than `M` are cut to `M` by dropping
/// uniformly random entries (seeded per node). The entry point is the lowest
/// id on the top level.
pub fn merge_shards(shards: &[ShardGraph], n: usize, max_degree: usize, seed: u64) -> Result<PrunedGraph> {
    merge_inner(shards, n, max_degree, seed, None)
}

/// [`merge_shards`], except the random drop never removes a node's nearest
/// merged neighbor under `dist`.
pub fn merge_shards_keep_nearest(
    shards: &[ShardGraph],
    n: usize,
    max_degree: usize,
    seed: u64,
    mut dist: impl FnMut(u32, u32) -> f32,
) -> Result<PrunedGraph> {
    merge_inner(shards, n, max_degree, seed, Some(&mut dist))
}

fn merge_inner(
    shards: &[ShardGraph],
    n: usize,
    max_degree: usize,
    seed: u64,
    mut nearest: Option<&mut dyn FnMut(u32, u32) -> f32>,
) -> Result<PrunedGraph> {
    let mut levels = vec![None::<u8>; n];
    for s in shards {
        if s.graph.len() != s.global_ids.len() {
            return Err(Error::Merge("shard id map does not match its graph".into()));
        }
        for (local, &g) in s.global_ids.iter().enumerate() {
            let slot = levels
                .get_mut(g as usize)
                .ok_or_else(|| Error::Merge(format!("global id {g} out of range for n = {n}")))?;
            let l = s.graph.levels()[local];
            *slot = Some(slot.map_or(l, |x| x.max(l)));
        }
    }
    if let Some(missing) = levels.iter().position(Option::is_none) {
        return Err(Error::Merge(format!("node {missing} is not covered by any shard")));
    }
    let levels: Vec<u8> = levels.into_iter().map(|l| l.expect("checked")).collect();
    let mut lists: Vec<Vec<Vec<u32>>> = levels.iter().map(|&l| vec![Vec::new(); l as usize + 1]).collect();
    for s in shards {
        for (local, &g) in s.global_ids.iter().enumerate() {
            for (l, dst) in lists[g as usize].iter_mut().enumerate().take(s.graph.level(local as u32) + 1) {
                for &u in s.graph.neighbors(local as u32, l) {
                    let u = s.global_ids[u as usize];
                    if !dst.contains(&u) {
                        dst.push(u);
                    }
                }
            }
        }
    }
    let mut adj = AdjacencyGraph::new(max_degree);
    for &l in &levels {
        adj.push_node(l as usize);
    }
    for (v, per_level) in lists.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4D45_5247 ^ (v as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for (l, mut list) in per_level.into_iter().enumerate() {
            if list.len() > max_degree {
                let pinned = nearest.as_mut().map(|d| {
                    let key = |i: usize, d: &mut dyn FnMut(u32, u32) -> f32| Scored::new(d(v as u32, list[i]), list[i]);
                    (0..list.len()).min_by_key(|&i| key(i, *d)).expect("non-empty")
                });
                let mut keep: Vec<usize> = match pinned {
                    None => rand::seq::index::sample(&mut rng, list.len(), max_degree).into_vec(),
                    Some(p) => {
                        let mut k: Vec<usize> = rand::seq::index::sample(&mut rng, list.len() - 1, max_degree - 1)
                            .into_iter()
                            .map(|i| if i >= p { i + 1 } else { i })
                            .collect();
                        k.push(p);
                        k
                    }
                };
                keep.sort_unstable();
                list = keep.into_iter().map(|i| list[i]).collect();
            }
            adj.set_neighbors(v as u32, l, list);
        }
    }
    let top = levels.iter().copied().max();
    adj.set_entry(top.and_then(|t| levels.iter().position(|&l| l == t)).map(|i| i as u32));
    let g = adj.freeze();
    g.validate()?;
    Ok(g)
}

/// Full sharded pipeline: plan, pass 1 per shard for the degree oracle
/// (summed per global id), global hub selection, pass 2 per shard, merge.
/// PQ is trained on the planning sample and every code is produced during
/// the assignment pass.
pub fn build_sharded(
    items: &ItemStore,
    params: &BuildParams,
    k_shards: usize,
    provider: &dyn EmbeddingProvider,
    tracker: &ResidentTracker,
    keep_dir: Option<&Path>,
) -> Result<BuiltIndex> {
    params.validate()?;
    let n = items.len();
    if n == 0 {
        return Err(Error::Build("cannot build an index over zero items".into()));
    }
    let sample = default_sample_size(n, k_shards);
    let planned = plan_inner(
        items,
        k_shards,
        sample,
        provider,
        params.seed,
        tracker,
        Some(params),
        params.metric,
    )?;
    let (pq, codes) = planned.pq.expect("requested");
    let plan = planned.plan;
    let levels = assign_levels(n, params.max_degree, params.seed);
    let members: Vec<Vec<u32>> = (0..k_shards).map(|s| plan.members(s)).collect();

    let mut degrees = vec![0usize; n];
    let mut unpruned_shards = Vec::new();
    for ids in members.iter().filter(|m| !m.is_empty()) {
        let s = build_shard(items, ids, params, &levels, None, provider, tracker)?;
        for (local, &g) in s.global_ids.iter().enumerate() {
            degrees[g as usize] += s.graph.neighbors(local as u32, 0).len();
        }
        unpruned_shards.push(s);
    }
    let unpruned = merge_shards(&unpruned_shards, n, params.max_degree, params.seed)?;
    drop(unpruned_shards);
    let hubs = select_hubs(&degrees, params.hub_percent);

    let mut shards = Vec::new();
    for (s, ids) in members.iter().enumerate().filter(|(_, m)| !m.is_empty()) {
        let shard = build_shard(items, ids, params, &levels, Some(&hubs), provider, tracker)?;
        shard.graph.validate()?;
        if let Some(dir) = keep_dir {
            crate::graph::save(&shard.graph, &dir.join(format!("shard-{s:03}")))?;
        }
        shards.push(shard);
    }
    let graph = merge_shards(&shards, n, params.max_degree, params.seed)?;
    let pruned = degree_stats(&graph);
    Ok(BuiltIndex {
        report: BuildReport {
            unpruned: degree_stats(&unpruned),
            measured_backfill: measured_backfill(&pruned, params),
            pruned,
            hubs: hubs.len(),
            trimmed_cap: None,
            peak_resident: tracker.peak(),
        },
        graph,
        pq,
        codes,
    })
}
