use super::*;
use crate::builder::{construct, BuildParams};
use crate::graph::{AdjacencyGraph, PrunedGraph};
use crate::pq::PqModel;
use crate::vectors::{synthetic_embed, SyntheticProvider};
use std::sync::atomic::{AtomicUsize, Ordering};

fn synth(n: usize, dim: usize, tag: &str) -> Vec<Vector> {
    (0..n)
        .map(|i| synthetic_embed(format!("{tag}-{i}").as_bytes(), dim, 5))
        .collect()
}

struct Flat {
    g: PrunedGraph,
    vectors: Vec<Vector>,
    pq: PqModel,
    codes: PqCodes,
}

fn flat(n: usize) -> Flat {
    let vectors = synth(n, 16, "s");
    let params = BuildParams::default().with_max_degree(12);
    let params = BuildParams {
        ef_construction: 40,
        ..params
    };
    let g = construct(&vectors, &vec![0; n], &params, None).freeze();
    let pq = PqModel::train(&vectors, 4, 4, 1, Metric::Cosine).unwrap();
    let codes = PqCodes::encode_all(&pq, &vectors).unwrap();
    Flat { g, vectors, pq, codes }
}

fn brute(vectors: &[Vector], q: &[f32], k: usize) -> Vec<u32> {
    let mut all: Vec<Scored> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| Scored::new(Metric::Cosine.eval(q, v), i as u32))
        .collect();
    all.sort();
    all.iter().take(k).map(|s| s.id).collect()
}

#[test]
fn single_node_graph() {
    let g = PrunedGraph::from_lists(4, &[vec![]]).unwrap();
    let v = vec![vec![3.0f32, 4.0]];
    let src = StoredVectors {
        vectors: &v,
        metric: Metric::L2,
    };
    let r = best_first_search(&g, &[0.0, 0.0], &SearchParams::exact(1, 1), &src, None).unwrap();
    assert_eq!(r.results, vec![Scored::new(25.0, 0)]);
    assert_eq!(r.recomputations, 1);
}

#[test]
fn path_graph_hand_trace() {
    // 0 - 1 - 2 - 3 - 4 on a line, entry 0, query beyond node 4
    let lists = vec![vec![1], vec![0, 2], vec![1, 3], vec![2, 4], vec![3]];
    let g = PrunedGraph::from_lists(2, &lists).unwrap();
    let v: Vec<Vector> = (0..5).map(|i| vec![i as f32]).collect();
    let src = StoredVectors {
        vectors: &v,
        metric: Metric::L2,
    };
    let r = best_first_search(&g, &[4.5], &SearchParams::exact(3, 5), &src, None).unwrap();
    assert_eq!(r.visited, vec![0, 1, 2, 3, 4]);
    assert_eq!(r.ids(), vec![4, 3, 2]);
    assert_eq!(r.results[0].dist, 0.25);
    assert_eq!(r.batches, vec![1, 1, 1, 1, 1]);
    // ef=1 keeps walking toward the query
    let r = best_first_search(&g, &[4.5], &SearchParams::exact(1, 1), &src, None).unwrap();
    assert_eq!(r.visited, vec![0, 1, 2, 3, 4]);
}

#[test]
fn two_level_reduces_to_best_first() {
    let f = flat(800);
    let src = StoredVectors {
        vectors: &f.vectors,
        metric: Metric::Cosine,
    };
    for qi in 0..20 {
        let q = synthetic_embed(format!("q-{qi}").as_bytes(), 16, 9);
        let a = best_first_search(&f.g, &q, &SearchParams::exact(3, 24), &src, None).unwrap();
        let b = two_level_search(
            &f.g,
            &q,
            &SearchParams::two_level(3, 24, 100.0, 1),
            &src,
            &f.pq,
            &f.codes,
            None,
        )
        .unwrap();
        assert_eq!(a.visited, b.visited, "query {qi}");
        assert_eq!(a.results, b.results);
        assert_eq!(a.recomputations, b.recomputations);
    }
}

#[test]
fn full_exploration_is_exact() {
    let f = flat(500);
    let src = StoredVectors {
        vectors: &f.vectors,
        metric: Metric::Cosine,
    };
    for qi in 0..10 {
        let q = synthetic_embed(format!("q-{qi}").as_bytes(), 16, 9);
        let p = SearchParams::two_level(5, 500, 100.0, 64);
        let r = two_level_search(&f.g, &q, &p, &src, &f.pq, &f.codes, None).unwrap();
        assert_eq!(r.ids(), brute(&f.vectors, &q, 5));
    }
}

#[test]
fn batch_accounting() {
    let f = flat(1500);
    let src = StoredVectors {
        vectors: &f.vectors,
        metric: Metric::Cosine,
    };
    for qi in 0..20 {
        let q = synthetic_embed(format!("q-{qi}").as_bytes(), 16, 9);
        let p = SearchParams::two_level(3, 64, 30.0, 16);
        let r = two_level_search(&f.g, &q, &p, &src, &f.pq, &f.codes, None).unwrap();
        assert_eq!(r.batches.iter().sum::<usize>(), r.recomputations);
        assert!(r.approx_lookups >= r.recomputations);
        // the entry recompute plus forced flushes are the only short batches
        let short = r.batches.iter().filter(|&&b| b != 16).count();
        assert!(short <= 1 + r.forced_flushes, "{:?} forced {}", r.batches, r.forced_flushes);
        assert_eq!(r.batches[0], 1);
        for w in r.results.windows(2) {
            assert!(w[0] < w[1]);
        }
    }
}

#[test]
fn cache_is_transparent() {
    let items = crate::items::ItemStore::from_items((0..600).map(|i| format!("doc {i}")));
    let provider = SyntheticProvider::new(16, 2);
    let src = RecomputeSource {
        items: &items,
        provider: &provider,
        metric: Metric::Cosine,
    };
    let ids: Vec<u32> = (0..600).collect();
    let vectors = crate::builder::embed_items(&items, &ids, &provider, Metric::Cosine).unwrap();
    let params = BuildParams {
        ef_construction: 32,
        ..BuildParams::default().with_max_degree(10)
    };
    let levels = crate::builder::assign_levels(600, 10, 1);
    let g = construct(&vectors, &levels, &params, None).freeze();
    let pq = PqModel::train(&vectors, 4, 4, 1, Metric::Cosine).unwrap();
    let codes = PqCodes::encode_all(&pq, &vectors).unwrap();
    let tenth = EmbeddingCache::build(&g, 10.0, &src).unwrap();
    let all = EmbeddingCache::build(&g, 100.0, &src).unwrap();
    assert_eq!(tenth.len(), 60);
    for qi in 0..10 {
        let q = synthetic_embed(format!("query {qi}").as_bytes(), 16, 2);
        for p in [SearchParams::exact(3, 30), SearchParams::two_level(3, 30, 30.0, 8)] {
            let plain = search(&g, &q, &p, &src, Some((&pq, &codes)), None).unwrap();
            let cached = search(&g, &q, &p, &src, Some((&pq, &codes)), Some(&tenth)).unwrap();
            let full = search(&g, &q, &p, &src, Some((&pq, &codes)), Some(&all)).unwrap();
            assert_eq!(plain.results, cached.results);
            assert_eq!(plain.results, full.results);
            assert_eq!(full.recomputations, 0);
            assert!(full.batches.is_empty());
            assert_eq!(cached.recomputations + cached.cache_hits, plain.recomputations);
        }
    }
}

#[test]
fn deleted_nodes_filtered_but_traversed() {
    let lists = vec![vec![1], vec![0, 2], vec![1]];
    let mut g = PrunedGraph::from_lists(2, &lists).unwrap();
    g.mark_deleted(1).unwrap();
    let v: Vec<Vector> = (0..3).map(|i| vec![i as f32]).collect();
    let src = StoredVectors {
        vectors: &v,
        metric: Metric::L2,
    };
    let r = best_first_search(&g, &[1.1], &SearchParams::exact(2, 3), &src, None).unwrap();
    assert_eq!(r.ids(), vec![2, 0]);
    assert!(r.visited.contains(&1));
}

#[test]
fn params_rejected() {
    let g = PrunedGraph::from_lists(2, &[vec![]]).unwrap();
    let v = vec![vec![1.0f32, 0.0]];
    let src = StoredVectors {
        vectors: &v,
        metric: Metric::L2,
    };
    let mut p = SearchParams::exact(3, 2);
    assert!(best_first_search(&g, &[0.0, 0.0], &p, &src, None).is_err());
    p.ef = 3;
    p.alpha = 0.0;
    assert!(best_first_search(&g, &[0.0, 0.0], &p, &src, None).is_err());
    assert!(matches!(
        best_first_search(&g, &[0.0], &SearchParams::exact(1, 1), &src, None),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn empty_graph_returns_nothing() {
    let g = AdjacencyGraph::new(4).freeze();
    let v: Vec<Vector> = vec![];
    let src = StoredVectors {
        vectors: &v,
        metric: Metric::L2,
    };
    let src = RecomputeWrapper(&src, 2);
    let r = best_first_search(&g, &[0.0, 0.0], &SearchParams::exact(1, 1), &src, None).unwrap();
    assert!(r.results.is_empty());
}

struct RecomputeWrapper<'a>(&'a StoredVectors<'a>, usize);

impl ExactSource for RecomputeWrapper<'_> {
    fn metric(&self) -> Metric {
        self.0.metric
    }
    fn dim(&self) -> usize {
        self.1
    }
    fn fetch(&self, ids: &[u32], t: &mut StageTimes) -> Result<Vec<Vector>> {
        self.0.fetch(ids, t)
    }
}

/// Fails every call after the first `ok` calls.
struct Flaky<'a> {
    inner: StoredVectors<'a>,
    ok: usize,
    calls: AtomicUsize,
}

impl ExactSource for Flaky<'_> {
    fn metric(&self) -> Metric {
        self.inner.metric
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn fetch(&self, ids: &[u32], t: &mut StageTimes) -> Result<Vec<Vector>> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.ok {
            return Err(Error::Transport {
                retries: 2,
                detail: "connection reset".into(),
            });
        }
        self.inner.fetch(ids, t)
    }
}

#[test]
fn provider_failure_carries_partial_report() {
    let f = flat(300);
    let src = Flaky {
        inner: StoredVectors {
            vectors: &f.vectors,
            metric: Metric::Cosine,
        },
        ok: 3,
        calls: AtomicUsize::new(0),
    };
    let q = synthetic_embed(b"q", 16, 9);
    match best_first_search(&f.g, &q, &SearchParams::exact(3, 20), &src, None) {
        Err(Error::Search {
            recomputations,
            partial,
            source,
        }) => {
            assert_eq!(recomputations, partial.recomputations);
            assert_eq!(partial.batches.len(), 3);
            assert!(!partial.results.is_empty());
            assert!(source.is_provider());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn window_edge_matches_rank() {
    let mut w = Window::default();
    let mut all = Vec::new();
    let mut x = 12345u64;
    for step in 0..200 {
        for _ in 0..(step % 7) {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let s = Scored::new((x >> 40) as f32, (x >> 20) as u32 & 0xFFFF);
            if !all.contains(&s) {
                all.push(s);
                w.insert(s);
            }
        }
        all.sort();
        let edge = w.resize(0.3);
        if all.is_empty() {
            assert!(edge.is_none());
        } else {
            let want = ((0.3 * all.len() as f64).ceil() as usize).clamp(1, all.len());
            assert_eq!(edge, Some(all[want - 1]));
        }
    }
}
