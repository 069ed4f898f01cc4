use hubgraph::eval::{run_ablation, AblationConfig, Fixture, FixtureConfig, Variants};
use hubgraph::pq::{PqCodes, PqModel};
use hubgraph::search::{RecomputeSource, SearchMode, StoredVectors};

fn pq_for(f: &Fixture) -> (PqModel, PqCodes) {
    let b = &f.config.build;
    let pq = PqModel::train(&f.vectors, b.pq_subspaces.unwrap(), b.pq_iters, b.seed, b.metric).unwrap();
    let codes = PqCodes::encode_all(&pq, &f.vectors).unwrap();
    (pq, codes)
}

#[test]
fn standard_fixture_ablation() {
    let f = Fixture::standard().unwrap();
    let variants = Variants::build(&f.vectors, &f.config.build, 0.5).unwrap();
    let (pq, codes) = pq_for(&f);
    let provider = f.config.provider();
    let src = RecomputeSource {
        items: &f.items,
        provider: &provider,
        metric: f.config.build.metric,
    };
    let cfg = AblationConfig {
        efs: vec![16, 64, 256],
        ..AblationConfig::default()
    };
    let out = run_ablation(&variants, &f.queries, &f.truth, &src, &pq, &codes, &cfg).unwrap();

    let rc = |v: &str| out.matched(v, SearchMode::ExactBestFirst).unwrap().recomputations.unwrap();
    let ratio = rc("random_prune") / rc("ours");
    assert!(ratio >= 1.2, "random-prune / ours = {ratio}");

    // with recomputation dominating, the instrumented stages cover the wall time
    eprintln!("{}", out.stages_tsv());
    let share = out.stages.total().as_secs_f64() / out.wall.as_secs_f64();
    assert!(share >= 0.95, "stage share {share}");

    assert_eq!(out.histograms.len(), 4);
    assert_eq!(out.curve.rows.len(), 4 * 3 * (1 + cfg.alphas.len()));
    assert_eq!(out.matched.len(), 8);
    let dir = tempfile::tempdir().unwrap();
    out.write_dir(dir.path()).unwrap();
    let curve = std::fs::read_to_string(dir.path().join("curve.tsv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + out.curve.rows.len());
}

#[test]
fn ablation_tables_are_reproducible() {
    let run = || {
        let f = Fixture::generate(FixtureConfig::standard().with_n(1500)).unwrap();
        let variants = Variants::build(&f.vectors, &f.config.build, 0.5).unwrap();
        let (pq, codes) = pq_for(&f);
        let src = StoredVectors {
            vectors: &f.vectors,
            metric: f.config.build.metric,
        };
        let cfg = AblationConfig {
            efs: vec![8, 32],
            ..AblationConfig::default()
        };
        let out = run_ablation(&variants, &f.queries, &f.truth, &src, &pq, &codes, &cfg).unwrap();
        (out.curve.to_tsv(), out.matched_tsv(), out.degrees_tsv())
    };
    assert_eq!(run(), run());
}
