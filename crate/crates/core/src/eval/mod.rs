//! Ground truth, recall, ef tuning, pruning baselines and the ablation harness.

use std::collections::{BTreeMap, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{construct, BuildParams};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyGraph, GraphView, PrunedGraph};
use crate::scored::Scored;
use crate::vectors::{Metric, Vector};

mod ablation;
mod fixture;

pub use ablation::{
    evaluate, matched_point, run_ablation, AblationConfig, AblationOutput, CurveRow, EvalPoint,
    MatchedRow, TradeoffCurve, Variants,
};
pub use fixture::{Fixture, FixtureConfig};

/// Exact top-k by linear scan with `(distance, id)` order. Nodes for which
/// `skip` returns true are ignored.
pub fn brute_force_topk(
    vectors: &[Vector],
    q: &[f32],
    k: usize,
    metric: Metric,
    skip: impl Fn(u32) -> bool,
) -> Vec<u32> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Scored> = BinaryHeap::with_capacity(k + 1);
    for (i, v) in vectors.iter().enumerate() {
        let id = i as u32;
        if skip(id) {
            continue;
        }
        let s = Scored::new(metric.eval(q, v), id);
        if heap.len() < k {
            heap.push(s);
        } else if s < *heap.peek().expect("k >= 1") {
            heap.pop();
            heap.push(s);
        }
    }
    heap.into_sorted_vec().into_iter().map(|s| s.id).collect()
}

/// Per-query exact top-k lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub k: usize,
    pub metric: Metric,
    pub ids: Vec<Vec<u32>>,
}

impl GroundTruth {
    pub fn compute(vectors: &[Vector], queries: &[Vector], k: usize, metric: Metric) -> Self {
        Self::compute_active(vectors, queries, k, metric, |_| false)
    }

    pub fn compute_active(
        vectors: &[Vector],
        queries: &[Vector],
        k: usize,
        metric: Metric,
        deleted: impl Fn(u32) -> bool,
    ) -> Self {
        let ids = queries
            .iter()
            .map(|q| brute_force_topk(vectors, q, k, metric, &deleted))
            .collect();
        Self { k, metric, ids }
    }
}

/// `|returned ∩ truth| / k` with `k = |truth|`.
pub fn recall_at_k(returned: &[u32], truth: &[u32]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("recall needs k >= 1".into()));
    }
    let hit = returned
        .iter()
        .take(truth.len())
        .filter(|id| truth.contains(id))
        .count();
    Ok(hit as f64 / truth.len() as f64)
}

pub fn mean_recall(results: &[Vec<u32>], truth: &GroundTruth) -> Result<f64> {
    if results.len() != truth.ids.len() || results.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} result lists for {} queries",
            results.len(),
            truth.ids.len()
        )));
    }
    let mut sum = 0.0;
    for (r, t) in results.iter().zip(&truth.ids) {
        sum += recall_at_k(r, t)?;
    }
    Ok(sum / results.len() as f64)
}

/// Outcome of [`tune_ef`].
#[derive(Debug, Clone, PartialEq)]
pub enum EfTuning {
    Found {
        ef: usize,
        recall: f64,
        /// Set when a re-check of either endpoint disagreed with the bisection
        /// (non-monotone noise); `ef` was then raised by one step.
        widened: bool,
    },
    Infeasible {
        best_recall: f64,
    },
}

impl EfTuning {
    pub fn ef(&self) -> Option<usize> {
        match self {
            EfTuning::Found { ef, .. } => Some(*ef),
            EfTuning::Infeasible { .. } => None,
        }
    }
}

/// Smallest `ef` in `[k, n]` whose mean recall reaches `target`. `recall_at`
/// evaluates the query set at a given `ef`; results are memoized. Gallops
/// upward from `k`, then bisects.
pub fn tune_ef(
    k: usize,
    n: usize,
    target: f64,
    mut recall_at: impl FnMut(usize) -> Result<f64>,
) -> Result<EfTuning> {
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= n (k = {k}, n = {n})")));
    }
    let mut memo: BTreeMap<usize, f64> = BTreeMap::new();
    let mut eval = |ef: usize, memo: &mut BTreeMap<usize, f64>| -> Result<f64> {
        if let Some(&r) = memo.get(&ef) {
            return Ok(r);
        }
        let r = recall_at(ef)?;
        memo.insert(ef, r);
        Ok(r)
    };
    if eval(k, &mut memo)? >= target {
        return Ok(EfTuning::Found {
            ef: k,
            recall: memo[&k],
            widened: false,
        });
    }
    let mut lo = k;
    let mut hi = k;
    loop {
        let next = (hi * 2).min(n);
        if next == hi {
            return Ok(EfTuning::Infeasible {
                best_recall: memo.values().copied().fold(0.0, f64::max),
            });
        }
        hi = next;
        if eval(hi, &mut memo)? >= target {
            break;
        }
        lo = hi;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid, &mut memo)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Post-check both endpoints with fresh evaluations. Noisy recall may
    // disagree with the bisection; one extra step of ef absorbs it.
    let upper = recall_at(hi)?;
    let lower = if hi > k { recall_at(hi - 1)? } else { f64::NEG_INFINITY };
    let mut ef = hi;
    let mut recall = upper;
    let widened = (upper < target || lower >= target) && hi < n;
    if widened {
        log::warn!("recall is not monotone in ef near {hi}; widened the tuned ef by one step");
        ef = hi + 1;
        recall = recall_at(ef)?;
    }
    Ok(EfTuning::Found { ef, recall, widened })
}

/// Removes exactly `round(fraction * E)` base-level edges, sampled uniformly
/// without replacement. Upper levels are kept.
pub fn baseline_random_prune(g: &PrunedGraph, fraction: f64, seed: u64) -> Result<PrunedGraph> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1), got {fraction}")));
    }
    let mut adj: AdjacencyGraph = g.thaw();
    let edges: Vec<(u32, u32)> = (0..g.len() as u32)
        .flat_map(|v| g.neighbors(v, 0).iter().map(move |&u| (v, u)))
        .collect();
    let drop = (fraction * edges.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD20F);
    let mut removed = vec![false; edges.len()];
    for i in rand::seq::index::sample(&mut rng, edges.len(), drop) {
        removed[i] = true;
    }
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); g.len()];
    for (i, &(v, u)) in edges.iter().enumerate() {
        if !removed[i] {
            lists[v as usize].push(u);
        }
    }
    for (v, list) in lists.into_iter().enumerate() {
        adj.set_neighbors(v as u32, 0, list);
    }
    let out = adj.freeze();
    out.validate()?;
    Ok(out)
}

/// Full rebuild at a uniform cap of `M / 2`.
pub fn baseline_small_m(vectors: &[Vector], levels: &[u8], params: &BuildParams) -> Result<PrunedGraph> {
    let half = (params.max_degree / 2).max(1);
    let p = BuildParams {
        max_degree: half,
        low_degree: crate::builder::default_low_degree(half).min(half.saturating_sub(1)).max(1),
        ..params.clone()
    };
    let g = construct(vectors, levels, &p, None).freeze();
    g.validate()?;
    Ok(g)
}

/// Number of nodes whose base-level degree is at least `ceil(0.8 * M)`.
pub fn hub_survivors<G: GraphView + ?Sized>(g: &G, max_degree: usize) -> usize {
    let floor = (0.8 * max_degree as f64).ceil() as usize;
    (0..g.node_count() as u32)
        .filter(|&v| g.neighbors(v, 0).len() >= floor)
        .count()
}

#[cfg(test)]
mod tests;
