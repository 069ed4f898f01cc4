//! Browser playground over 2-D point clouds: build the unpruned and pruned
//! graphs, draw them, click to search and watch the visit order.
//!
//! Everything crosses the JS boundary as JSON strings. [`Demo`] holds the
//! logic and is plain Rust; [`Playground`] is the wasm-bindgen wrapper.

use std::collections::BTreeMap;

use hubgraph::builder::{build_graph, default_low_degree, BuildParams};
use hubgraph::graph::{degree_stats, GraphView, PrunedGraph};
use hubgraph::pq::{PqCodes, PqModel, CENTROIDS};
use hubgraph::search::{search, SearchMode, SearchParams, StoredVectors};
use hubgraph::vectors::{Metric, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

pub const MAX_POINTS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub n: usize,
    pub clusters: usize,
    pub seed: u64,
    pub max_degree: usize,
    /// `None` derives `m` from `M`.
    pub low_degree: Option<usize>,
    pub hub_percent: f64,
    pub ef_construction: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            n: 400,
            clusters: 5,
            seed: 7,
            max_degree: 12,
            low_degree: None,
            hub_percent: 5.0,
            ef_construction: 48,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub k: usize,
    pub ef: usize,
    pub alpha: f64,
    pub batch: usize,
    pub mode: SearchMode,
    /// `pruned` or `unpruned`.
    pub graph: String,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            k: 5,
            ef: 16,
            alpha: 30.0,
            batch: 8,
            mode: SearchMode::TwoLevel,
            graph: "pruned".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphJson {
    pub points: Vec<[f32; 2]>,
    /// Directed base-level edges.
    pub edges: Vec<[u32; 2]>,
    pub levels: Vec<usize>,
    pub entry: Option<u32>,
    pub avg_degree: f64,
    pub metadata_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchJson {
    pub results: Vec<u32>,
    pub distances: Vec<f32>,
    pub visited: Vec<u32>,
    pub exact: Vec<u32>,
    pub recomputations: usize,
    pub approx_lookups: usize,
    pub batches: Vec<usize>,
}

/// A generated point cloud with both graphs and PQ codes.
#[derive(Debug, Clone)]
pub struct Demo {
    config: DemoConfig,
    points: Vec<Vector>,
    pruned: PrunedGraph,
    unpruned: PrunedGraph,
    pq: PqModel,
    codes: PqCodes,
}

/// Gaussian blobs in the unit square.
pub fn blobs(n: usize, clusters: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f32; 2]> = (0..clusters.max(1))
        .map(|_| [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)])
        .collect();
    (0..n)
        .map(|i| {
            let c = centers[i % centers.len()];
            // Box-Muller
            let (u1, u2): (f32, f32) = (rng.gen_range(f32::EPSILON..1.0), rng.gen());
            let r = (-2.0 * u1.ln()).sqrt() * 0.06;
            let t = std::f32::consts::TAU * u2;
            vec![c[0] + r * t.cos(), c[1] + r * t.sin()]
        })
        .collect()
}

impl Demo {
    pub fn new(config: DemoConfig) -> Result<Self, String> {
        if !(2..=MAX_POINTS).contains(&config.n) {
            return Err(format!("n must be in [2, {MAX_POINTS}]"));
        }
        let mut params = BuildParams {
            ef_construction: config.ef_construction,
            metric: Metric::L2,
            seed: config.seed,
            hub_percent: config.hub_percent,
            ..BuildParams::default()
        }
        .with_max_degree(config.max_degree);
        params.low_degree = config.low_degree.unwrap_or_else(|| default_low_degree(config.max_degree));
        let points = blobs(config.n, config.clusters, config.seed);
        let built = build_graph(&points, &params).map_err(|e| e.to_string())?;
        // PQ training wants a full codebook's worth of rows
        let sample: Vec<Vector> = points.iter().cycle().take(points.len().max(CENTROIDS)).cloned().collect();
        let pq = PqModel::train(&sample, 1, 10, config.seed, Metric::L2).map_err(|e| e.to_string())?;
        let codes = PqCodes::encode_all(&pq, &points).map_err(|e| e.to_string())?;
        Ok(Self {
            config,
            points,
            pruned: built.graph,
            unpruned: built.unpruned,
            pq,
            codes,
        })
    }

    pub fn config(&self) -> &DemoConfig {
        &self.config
    }

    fn pick(&self, which: &str) -> Result<&PrunedGraph, String> {
        match which {
            "pruned" => Ok(&self.pruned),
            "unpruned" => Ok(&self.unpruned),
            _ => Err(format!("unknown graph {which:?} (pruned, unpruned)")),
        }
    }

    pub fn graph(&self, which: &str) -> Result<GraphJson, String> {
        let g = self.pick(which)?;
        let mut edges = Vec::new();
        for v in 0..g.node_count() as u32 {
            edges.extend(g.neighbors(v, 0).iter().map(|&u| [v, u]));
        }
        let s = degree_stats(g);
        Ok(GraphJson {
            points: self.points.iter().map(|p| [p[0], p[1]]).collect(),
            edges,
            levels: (0..g.node_count() as u32).map(|v| g.level(v)).collect(),
            entry: g.entry_point(),
            avg_degree: s.avg_degree,
            metadata_bytes: s.metadata_bytes,
        })
    }

    /// Base-level degree histograms of both graphs.
    pub fn histograms(&self) -> BTreeMap<&'static str, BTreeMap<usize, usize>> {
        BTreeMap::from([
            ("pruned", degree_stats(&self.pruned).degree_histogram),
            ("unpruned", degree_stats(&self.unpruned).degree_histogram),
        ])
    }

    pub fn search(&self, x: f32, y: f32, q: &QueryConfig) -> Result<SearchJson, String> {
        let g = self.pick(&q.graph)?;
        let k = q.k.min(self.points.len());
        let params = match q.mode {
            SearchMode::TwoLevel => SearchParams::two_level(k, q.ef.max(k), q.alpha, q.batch),
            SearchMode::ExactBestFirst => SearchParams::exact(k, q.ef.max(k)),
        };
        let src = StoredVectors {
            vectors: &self.points,
            metric: Metric::L2,
        };
        let r = search(g, &[x, y], &params, &src, Some((&self.pq, &self.codes)), None).map_err(|e| e.to_string())?;
        let mut exact: Vec<u32> = (0..self.points.len() as u32).collect();
        let d = |i: u32| Metric::L2.eval(&[x, y], &self.points[i as usize]);
        exact.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
        exact.truncate(k);
        Ok(SearchJson {
            results: r.ids(),
            distances: r.results.iter().map(|s| s.dist).collect(),
            visited: r.visited,
            exact,
            recomputations: r.recomputations,
            approx_lookups: r.approx_lookups,
            batches: r.batches,
        })
    }
}

fn to_js(e: impl ToString) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub struct Playground(Demo);

#[wasm_bindgen]
impl Playground {
    /// `config` is a JSON [`DemoConfig`]; missing fields take defaults.
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str) -> Result<Playground, JsValue> {
        let cfg: DemoConfig = serde_json::from_str(config).map_err(to_js)?;
        Demo::new(cfg).map(Playground).map_err(to_js)
    }

    pub fn graph(&self, which: &str) -> Result<String, JsValue> {
        let g = self.0.graph(which).map_err(to_js)?;
        serde_json::to_string(&g).map_err(to_js)
    }

    pub fn histograms(&self) -> String {
        serde_json::to_string(&self.0.histograms()).expect("maps serialize")
    }

    /// `query` is a JSON [`QueryConfig`].
    pub fn search(&self, x: f32, y: f32, query: &str) -> Result<String, JsValue> {
        let q: QueryConfig = serde_json::from_str(query).map_err(to_js)?;
        let r = self.0.search(x, y, &q).map_err(to_js)?;
        serde_json::to_string(&r).map_err(to_js)
    }
}
