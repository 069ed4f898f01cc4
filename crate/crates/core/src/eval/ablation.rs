use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{baseline_random_prune, baseline_small_m, mean_recall, tune_ef, EfTuning, GroundTruth};
use crate::builder::{assign_levels, build_with_hubs, reference_degrees, select_hubs, BuildParams};
use crate::error::Result;
use crate::graph::{degree_stats, GraphView, PrunedGraph};
use crate::pq::{PqCodes, PqModel};
use crate::search::clock::Stopwatch;
use crate::search::{search, EmbeddingCache, ExactSource, SearchMode, SearchParams, StageTimes};
use crate::vectors::Vector;

/// Aggregate of one parameter setting over a query set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalPoint {
    pub recall: f64,
    /// Mean per query.
    pub recomputations: f64,
    pub approx_lookups: f64,
    pub cache_hit_rate: f64,
    pub stage_times: StageTimes,
    pub wall: Duration,
    pub results: Vec<Vec<u32>>,
}

/// Runs every query sequentially and averages the counters.
pub fn evaluate<G: GraphView + ?Sized>(
    g: &G,
    queries: &[Vector],
    truth: &GroundTruth,
    params: &SearchParams,
    source: &dyn ExactSource,
    pq: Option<(&PqModel, &PqCodes)>,
    cache: Option<&EmbeddingCache>,
) -> Result<EvalPoint> {
    let mut p = EvalPoint::default();
    let (mut rc, mut al, mut hits) = (0usize, 0usize, 0usize);
    for q in queries {
        let sw = Stopwatch::start();
        let r = search(g, q, params, source, pq, cache)?;
        p.wall += sw.elapsed();
        rc += r.recomputations;
        al += r.approx_lookups;
        hits += r.cache_hits;
        p.stage_times.add(&r.stage_times);
        p.results.push(r.ids());
    }
    let nq = queries.len().max(1) as f64;
    p.recall = mean_recall(&p.results, truth)?;
    p.recomputations = rc as f64 / nq;
    p.approx_lookups = al as f64 / nq;
    p.cache_hit_rate = if hits + rc == 0 {
        0.0
    } else {
        hits as f64 / (hits + rc) as f64
    };
    Ok(p)
}

/// Tunes `ef` to the target recall and reports the counters there.
#[allow(clippy::too_many_arguments)]
pub fn matched_point<G: GraphView + ?Sized>(
    g: &G,
    queries: &[Vector],
    truth: &GroundTruth,
    template: &SearchParams,
    source: &dyn ExactSource,
    pq: Option<(&PqModel, &PqCodes)>,
    target: f64,
    max_ef: usize,
) -> Result<(EfTuning, Option<EvalPoint>)> {
    let k = template.k;
    let tuning = tune_ef(k, max_ef.min(g.node_count()).max(k), target, |ef| {
        let p = SearchParams { ef, ..template.clone() };
        Ok(evaluate(g, queries, truth, &p, source, pq, None)?.recall)
    })?;
    let point = match tuning.ef() {
        Some(ef) => {
            let p = SearchParams { ef, ..template.clone() };
            Some(evaluate(g, queries, truth, &p, source, pq, None)?)
        }
        None => None,
    };
    Ok((tuning, point))
}

/// The four graphs compared by the pruning ablation, built over the same
/// vectors and level draws.
#[derive(Debug, Clone)]
pub struct Variants {
    pub unpruned: PrunedGraph,
    pub ours: PrunedGraph,
    pub random_prune: PrunedGraph,
    pub small_m: PrunedGraph,
}

impl Variants {
    pub fn build(vectors: &[Vector], params: &BuildParams, prune_fraction: f64) -> Result<Self> {
        params.validate()?;
        let levels = assign_levels(vectors.len(), params.max_degree, params.seed);
        let (unpruned, degrees) = reference_degrees(vectors, &levels, params);
        let unpruned = unpruned.freeze();
        let hubs = select_hubs(&degrees, params.hub_percent);
        let ours = build_with_hubs(vectors, &levels, params, unpruned.clone(), degrees, hubs)?.graph;
        let random_prune = baseline_random_prune(&unpruned, prune_fraction, params.seed)?;
        let small_m = baseline_small_m(vectors, &levels, params)?;
        Ok(Self {
            unpruned,
            ours,
            random_prune,
            small_m,
        })
    }

    pub fn named(&self) -> [(&'static str, &PrunedGraph); 4] {
        [
            ("unpruned", &self.unpruned),
            ("ours", &self.ours),
            ("random_prune", &self.random_prune),
            ("small_m", &self.small_m),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub efs: Vec<usize>,
    pub alphas: Vec<f64>,
    pub batch_threshold: usize,
    pub random_prune_fraction: f64,
    pub target_recall: f64,
    pub max_ef: usize,
    pub k: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            efs: vec![8, 16, 32, 64, 128, 256, 512],
            alphas: vec![10.0, 30.0, 100.0],
            batch_threshold: 64,
            random_prune_fraction: 0.5,
            target_recall: 0.9,
            max_ef: 4096,
            k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub variant: String,
    pub mode: SearchMode,
    pub alpha: f64,
    pub ef: usize,
    pub recall: f64,
    pub recomputations: f64,
    pub approx_lookups: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub rows: Vec<CurveRow>,
}

impl TradeoffCurve {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant\tmode\talpha\tef\trecall\trecomputations\tapprox_lookups\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.3}\t{:.3}",
                r.variant, r.mode, r.alpha, r.ef, r.recall, r.recomputations, r.approx_lookups
            );
        }
        s
    }
}

/// Recompute count at the smallest ef reaching the target recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedRow {
    pub variant: String,
    pub mode: SearchMode,
    pub alpha: f64,
    pub ef: Option<usize>,
    pub recall: f64,
    pub recomputations: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AblationOutput {
    pub curve: TradeoffCurve,
    pub matched: Vec<MatchedRow>,
    pub histograms: BTreeMap<String, BTreeMap<usize, usize>>,
    /// Summed over the default two-level sweep point on `ours`.
    pub stages: StageTimes,
    pub wall: Duration,
}

impl AblationOutput {
    pub fn matched(&self, variant: &str, mode: SearchMode) -> Option<&MatchedRow> {
        self.matched.iter().find(|m| m.variant == variant && m.mode == mode)
    }

    pub fn degrees_tsv(&self) -> String {
        let mut s = String::from("variant\tdegree\tcount\n");
        for (name, h) in &self.histograms {
            for (d, c) in h {
                let _ = writeln!(s, "{name}\t{d}\t{c}");
            }
        }
        s
    }

    pub fn matched_tsv(&self) -> String {
        let mut s = String::from("variant\tmode\talpha\tef\trecall\trecomputations\n");
        for m in &self.matched {
            let ef = m.ef.map_or("infeasible".to_string(), |e| e.to_string());
            let rc = m.recomputations.map_or("-".to_string(), |r| format!("{r:.3}"));
            let _ = writeln!(s, "{}\t{}\t{}\t{ef}\t{:.6}\t{rc}", m.variant, m.mode, m.alpha, m.recall);
        }
        s
    }

    pub fn stages_tsv(&self) -> String {
        let t = &self.stages;
        let total = t.total().as_secs_f64().max(f64::MIN_POSITIVE);
        let mut s = String::from("stage\tseconds\tshare\n");
        for (name, d) in [
            ("pq_lookup", t.pq_lookup),
            ("payload_fetch", t.payload_fetch),
            ("embed", t.embed),
            ("distance", t.distance),
        ] {
            let _ = writeln!(s, "{name}\t{:.6}\t{:.4}", d.as_secs_f64(), d.as_secs_f64() / total);
        }
        let _ = writeln!(s, "wall\t{:.6}\t{:.4}", self.wall.as_secs_f64(), total / self.wall.as_secs_f64().max(f64::MIN_POSITIVE));
        s
    }

    /// Writes `curve.tsv`, `matched.tsv`, `degrees.tsv` and `stages.tsv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("curve.tsv"), self.curve.to_tsv())?;
        std::fs::write(dir.join("matched.tsv"), self.matched_tsv())?;
        std::fs::write(dir.join("degrees.tsv"), self.degrees_tsv())?;
        std::fs::write(dir.join("stages.tsv"), self.stages_tsv())?;
        Ok(())
    }
}

/// Sweeps `{variant, mode, alpha, ef}` and tunes each `(variant, mode)` to
/// the target recall.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    variants: &Variants,
    queries: &[Vector],
    truth: &GroundTruth,
    source: &dyn ExactSource,
    pq: &PqModel,
    codes: &PqCodes,
    cfg: &AblationConfig,
) -> Result<AblationOutput> {
    let mut out = AblationOutput::default();
    let pqs = Some((pq, codes));
    for (name, g) in variants.named() {
        out.histograms
            .insert(name.to_string(), degree_stats(g).degree_histogram);
        for &ef in &cfg.efs {
            let ef = ef.max(cfg.k);
            let exact = evaluate(g, queries, truth, &SearchParams::exact(cfg.k, ef), source, None, None)?;
            out.curve.rows.push(CurveRow {
                variant: name.into(),
                mode: SearchMode::ExactBestFirst,
                alpha: 100.0,
                ef,
                recall: exact.recall,
                recomputations: exact.recomputations,
                approx_lookups: exact.approx_lookups,
            });
            for &alpha in &cfg.alphas {
                let p = SearchParams::two_level(cfg.k, ef, alpha, cfg.batch_threshold);
                let pt = evaluate(g, queries, truth, &p, source, pqs, None)?;
                if name == "ours" && (alpha - 30.0).abs() < 1e-9 {
                    out.stages.add(&pt.stage_times);
                    out.wall += pt.wall;
                }
                out.curve.rows.push(CurveRow {
                    variant: name.into(),
                    mode: SearchMode::TwoLevel,
                    alpha,
                    ef,
                    recall: pt.recall,
                    recomputations: pt.recomputations,
                    approx_lookups: pt.approx_lookups,
                });
            }
        }
        let templates = [
            SearchParams::exact(cfg.k, cfg.k),
            SearchParams::two_level(cfg.k, cfg.k, 30.0, cfg.batch_threshold),
        ];
        for t in templates {
            let (tuning, point) =
                matched_point(g, queries, truth, &t, source, pqs, cfg.target_recall, cfg.max_ef)?;
            let recall = match (&tuning, &point) {
                (_, Some(p)) => p.recall,
                (EfTuning::Infeasible { best_recall }, None) => *best_recall,
                _ => 0.0,
            };
            out.matched.push(MatchedRow {
                variant: name.into(),
                mode: t.mode,
                alpha: if t.mode == SearchMode::ExactBestFirst { 100.0 } else { t.alpha },
                ef: tuning.ef(),
                recall,
                recomputations: point.map(|p| p.recomputations),
            });
        }
    }
    Ok(out)
}
