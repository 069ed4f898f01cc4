use super::*;
use crate::vectors::LiteralProvider;

fn config(dim: usize) -> IndexConfig {
    IndexConfig::new(
        ProviderConfig::synthetic(dim, 4),
        BuildParams {
            ef_construction: 32,
            seed: 9,
            ..BuildParams::default().with_max_degree(10)
        },
    )
}

fn corpus(n: usize) -> ItemStore {
    ItemStore::from_items((0..n).map(|i| format!("passage {i}")))
}

fn exact() -> SearchParams {
    SearchParams::exact(3, 40)
}

#[test]
fn meta_round_trips_through_toml() {
    let meta = IndexMeta::new(&config(8), 12);
    let text = meta.to_toml().unwrap();
    assert_eq!(IndexMeta::from_toml(&text).unwrap(), meta);
    let tampered = text.replace(&meta.provider_hash, "0000000000000000");
    assert!(matches!(IndexMeta::from_toml(&tampered), Err(Error::Format { .. })));
}

#[test]
fn create_open_search() {
    let dir = tempfile::tempdir().unwrap();
    let built = Index::create(dir.path(), corpus(300), &config(8), false).unwrap();
    let q = built.embed_query(b"passage 17").unwrap();
    let before = built.search(&q, &exact()).unwrap();
    assert_eq!(before.results[0].id, 17);
    drop(built);
    let opened = Index::open(dir.path()).unwrap();
    assert_eq!(opened.search(&q, &exact()).unwrap().results, before.results);
    let two = opened.search(&q, &SearchParams::two_level(3, 40, 30.0, 8)).unwrap();
    assert_eq!(two.results[0].id, 17);
}

#[test]
fn directory_is_locked_while_open() {
    let dir = tempfile::tempdir().unwrap();
    let a = Index::create(dir.path(), corpus(50), &config(8), false).unwrap();
    assert!(matches!(Index::open(dir.path()), Err(Error::Locked(_))));
    drop(a);
    Index::open(dir.path()).unwrap();
}

#[test]
fn provider_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    drop(Index::create(dir.path(), corpus(50), &config(8), false).unwrap());
    let other = ProviderConfig::synthetic(8, 5);
    assert!(matches!(
        Index::open_with_provider(dir.path(), &other),
        Err(Error::ProviderMismatch { .. })
    ));
    let mut same = ProviderConfig::synthetic(8, 4);
    same.max_batch = 7;
    Index::open_with_provider(dir.path(), &same).unwrap();
}

#[test]
fn mutations_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = Index::create(dir.path(), corpus(200), &config(8), false).unwrap();
    a.add(b"fresh one", AddVariant::Naive).unwrap();
    a.add(&[0xff, 0x00, 0x80], AddVariant::Simplified).unwrap();
    a.delete(3).unwrap();
    a.buffered_add(b"late arrival").unwrap();
    a.buffered_add(b"later arrival").unwrap();
    let q = a.embed_query(b"late arrival").unwrap();
    let want = a.search(&q, &exact()).unwrap().results;
    assert_eq!(want[0].id, 202);
    let snap = a.snapshot();
    drop(a);

    let mut b = Index::open(dir.path()).unwrap();
    assert_eq!(b.snapshot(), snap);
    assert_eq!(b.buffer().len(), 2);
    assert_eq!(b.search(&q, &exact()).unwrap().results, want);
    assert_eq!(b.items().get(201), Some(&[0xff, 0x00, 0x80][..]));
    b.compact().unwrap();
    assert_eq!(b.len(), 204);
    assert_eq!(std::fs::metadata(dir.path().join(LOG_FILE)).unwrap().len(), 0);
    let after = b.snapshot();
    drop(b);
    let c = Index::open(dir.path()).unwrap();
    assert_eq!(c.snapshot(), after);
    assert!(c.graph().is_deleted(3));
}

#[test]
fn buffered_item_is_visible_before_drain() {
    let v: Vec<Vec<f32>> = (0..120)
        .map(|i| vec![(i as f32).cos(), (i as f32).sin(), 0.5])
        .collect();
    let items = ItemStore::from_items(v.iter().map(|x| LiteralProvider::payload(x)));
    let cfg = IndexConfig {
        provider: ProviderConfig::literal(3),
        build: BuildParams {
            metric: Metric::L2,
            ef_construction: 24,
            ..BuildParams::default().with_max_degree(8)
        },
        ..config(3)
    };
    let mut idx = Index::build(items, &cfg).unwrap();
    let target = [9.0f32, -9.0, 9.0];
    let id = idx.buffered_add(&LiteralProvider::payload(&target)).unwrap();
    let r = idx.search(&target, &exact()).unwrap();
    assert_eq!(r.results[0], Scored::new(0.0, id));
    idx.drain().unwrap();
    assert!(idx.buffer().is_empty());
    assert_eq!(idx.search(&target, &exact()).unwrap().results[0].id, id);
}

#[test]
fn failed_add_leaves_items_untouched() {
    let mut idx = Index::build(corpus(60), &config(8)).unwrap();
    idx.set_provider(Box::new(LiteralProvider::new(8))).unwrap();
    assert!(idx.add(b"not a vector", AddVariant::Naive).is_err());
    assert_eq!(idx.items().len(), 60);
    assert_eq!(idx.len(), 60);
    assert!(idx.set_provider(Box::new(LiteralProvider::new(4))).is_err());
}

#[test]
fn payload_hex_round_trip() {
    let raw = vec![0u8, 255, 16, 17];
    let p = Payload::new(&raw);
    let line = serde_json::to_string(&Mutation::Buffer { id: 2, content: p }).unwrap();
    match serde_json::from_str::<Mutation>(&line).unwrap() {
        Mutation::Buffer { content, .. } => assert_eq!(content.into_bytes().unwrap(), raw),
        other => panic!("{other:?}"),
    }
}

#[test]
fn sharded_create_cleans_up() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = IndexConfig { shards: 3, ..config(8) };
    let idx = Index::create(dir.path(), corpus(400), &cfg, false).unwrap();
    assert!(!dir.path().join(SHARD_DIR).exists());
    assert_eq!(idx.len(), 400);
    drop(idx);
    let dir2 = tempfile::tempdir().unwrap();
    drop(Index::create(dir2.path(), corpus(400), &cfg, true).unwrap());
    assert!(dir2.path().join(SHARD_DIR).join("shard-000").join("graph.bin").exists());
}
