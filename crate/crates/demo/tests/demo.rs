use hubgraph_demo::{blobs, Demo, DemoConfig, Playground, QueryConfig};
use hubgraph::search::SearchMode;

fn demo() -> Demo {
    Demo::new(DemoConfig::default()).unwrap()
}

#[test]
fn config_defaults_from_empty_json() {
    let cfg: DemoConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(cfg, DemoConfig::default());
    let q: QueryConfig = serde_json::from_str(r#"{"mode": "exact_bestfirst", "k": 3}"#).unwrap();
    assert_eq!(q.mode, SearchMode::ExactBestFirst);
    assert_eq!(q.ef, QueryConfig::default().ef);
}

#[test]
fn blobs_are_seeded_and_bounded() {
    let a = blobs(300, 4, 1);
    assert_eq!(a, blobs(300, 4, 1));
    assert_ne!(a, blobs(300, 4, 2));
    assert!(a.iter().all(|p| p.len() == 2 && p.iter().all(|x| (-0.5..1.5).contains(x))));
}

#[test]
fn pruned_graph_is_sparser() {
    let d = demo();
    let (p, u) = (d.graph("pruned").unwrap(), d.graph("unpruned").unwrap());
    assert_eq!(p.points.len(), 400);
    assert!(p.edges.len() < u.edges.len());
    assert!(p.metadata_bytes < u.metadata_bytes);
    let h = d.histograms();
    let total: usize = h["pruned"].values().sum();
    assert_eq!(total, 400);
    assert!(h["pruned"].keys().max() <= Some(&d.config().max_degree));
    for [a, b] in &p.edges {
        assert_ne!(a, b);
        assert!((*b as usize) < 400);
    }
    assert!(d.graph("other").is_err());
}

#[test]
fn full_exploration_matches_scan() {
    let d = demo();
    for (x, y) in [(0.5, 0.5), (0.1, 0.9), (0.3, 0.35)] {
        for mode in [SearchMode::ExactBestFirst, SearchMode::TwoLevel] {
            let q = QueryConfig {
                ef: 400,
                alpha: 100.0,
                mode,
                ..QueryConfig::default()
            };
            let r = d.search(x, y, &q).unwrap();
            assert_eq!(r.results, r.exact);
            assert_eq!(r.batches.iter().sum::<usize>(), r.recomputations);
            assert!(r.distances.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn two_level_recomputes_less_than_it_looks_up() {
    let d = demo();
    let r = d.search(0.5, 0.5, &QueryConfig::default()).unwrap();
    assert_eq!(r.results.len(), 5);
    assert!(r.recomputations < r.approx_lookups);
    assert!(!r.visited.is_empty());
}

#[test]
fn rejects_bad_configs() {
    assert!(Demo::new(DemoConfig { n: 1, ..DemoConfig::default() }).is_err());
    assert!(Demo::new(DemoConfig { max_degree: 1, ..DemoConfig::default() }).is_err());
}

#[test]
fn wrapper_round_trips_json() {
    let p = Playground::new(r#"{"n": 120, "seed": 3}"#).unwrap();
    let g: serde_json::Value = serde_json::from_str(&p.graph("pruned").unwrap()).unwrap();
    assert_eq!(g["points"].as_array().unwrap().len(), 120);
    let h: serde_json::Value = serde_json::from_str(&p.histograms()).unwrap();
    assert!(h["unpruned"].is_object());
    let r: serde_json::Value = serde_json::from_str(&p.search(0.2, 0.2, r#"{"k": 2}"#).unwrap()).unwrap();
    assert_eq!(r["results"].as_array().unwrap().len(), 2);
    let again = Playground::new(r#"{"n": 120, "seed": 3}"#).unwrap();
    assert_eq!(again.graph("pruned").unwrap(), p.graph("pruned").unwrap());
}
