use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use hubgraph::builder::{embed_items, prepare_vector};
use hubgraph::eval::{mean_recall, run_ablation, tune_ef, AblationConfig, EfTuning, GroundTruth, Variants};
use hubgraph::index::{Index, IndexMeta, META_FILE};
use hubgraph::items::{ingest_path, ByteWindow, ItemStore};
use hubgraph::search::{SearchMode, SearchParams, SearchReport};
use hubgraph::vectors::{parse_literal, Vector};

use crate::args::{AddArgs, BuildArgs, DeleteArgs, EvalArgs, IndexArg, IngestArgs, SearchArgs};
use crate::config::{apply_env, build_config, search_params, FileConfig};
use crate::usage;

const SNIPPET_CHARS: usize = 60;

fn ingest_into(input: &Path, dir: &Path, size: usize, overlap: usize) -> anyhow::Result<ItemStore> {
    let chunker = ByteWindow::new(size, overlap).map_err(|e| usage(e.to_string()))?;
    let ingested = ingest_path(input, &chunker)?;
    for w in &ingested.warnings {
        log::warn!("{w}");
    }
    std::fs::create_dir_all(dir)?;
    ingested.items.save(dir)?;
    eprintln!(
        "ingested {} items ({} bytes) from {} sources into {}",
        ingested.items.len(),
        ingested.items.byte_size(),
        ingested.sources,
        dir.display()
    );
    Ok(ingested.items)
}

pub fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    ingest_into(&a.input, &a.index.dir, a.chunk_bytes, a.chunk_overlap)?;
    Ok(())
}

fn missing_index(dir: &Path) -> anyhow::Error {
    anyhow::Error::from(hubgraph::Error::Format {
        section: "index",
        detail: format!(
            "no index in {d}; create one with `hubgraph ingest <input> --index {d}` then `hubgraph build --index {d}`",
            d = dir.display()
        ),
    })
}

/// Opens an existing index. A provider from `--config` must match the
/// recorded encoder; transport settings come from the environment.
fn open(dir: &Path, file: FileConfig) -> anyhow::Result<Index> {
    if !dir.join(META_FILE).exists() {
        return Err(missing_index(dir));
    }
    let mut provider = match file.provider {
        Some(p) => p,
        None => Index::read_meta(dir)?.provider,
    };
    apply_env(&mut provider)?;
    Index::open_with_provider(dir, &provider).with_context(|| format!("opening {}", dir.display()))
}

pub fn build(a: BuildArgs, file: FileConfig) -> anyhow::Result<()> {
    let cfg = build_config(file, &a)?;
    let dir = &a.index.dir;
    let items = match &a.input {
        Some(input) => ingest_into(input, dir, 1024, 128)?,
        None => {
            if !dir.join("items.dat").exists() {
                return Err(usage(format!(
                    "no items in {d}; run `hubgraph ingest <input> --index {d}` or pass --input",
                    d = dir.display()
                )));
            }
            ItemStore::load(dir)?
        }
    };
    let n = items.len();
    let index = Index::create(dir, items, &cfg, a.keep_shards)?;
    let s = index.stats();
    let mut out = format!(
        "built {n} nodes in {}\nmax_degree\t{}\nlow_degree\t{}\nhub_percent\t{}\navg_degree\t{:.3}\nmetadata_bytes\t{}\n",
        dir.display(),
        cfg.build.max_degree,
        cfg.build.low_degree,
        cfg.build.hub_percent,
        s.avg_degree,
        s.metadata_bytes,
    );
    if let Some(r) = index.build_report() {
        let _ = writeln!(out, "hubs\t{}\npeak_resident\t{}", r.hubs, r.peak_resident);
        if let Some(cap) = r.trimmed_cap {
            let _ = writeln!(out, "trimmed_cap\t{cap}");
        }
    }
    print!("{out}");
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect())
}

fn query_vector(index: &Index, text: &str) -> anyhow::Result<Vector> {
    let meta = index.meta();
    Ok(match parse_literal(text) {
        Some(v) => prepare_vector(v, meta.dim, meta.metric)?,
        None => index.embed_query(text.as_bytes())?,
    })
}

fn snippet(payload: &[u8]) -> String {
    let text = String::from_utf8_lossy(payload);
    let mut s: String = text
        .chars()
        .take(SNIPPET_CHARS)
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    if text.chars().count() > SNIPPET_CHARS {
        s.push_str("...");
    }
    s
}

fn render(index: &Index, r: &SearchReport, json: bool) -> anyhow::Result<String> {
    if json {
        return Ok(serde_json::to_string(r)? + "\n");
    }
    let mut out = String::new();
    for (rank, s) in r.results.iter().enumerate() {
        let payload = index.items().get(s.id).unwrap_or_default();
        let _ = writeln!(out, "{}\t{}\t{:.6}\t{}", rank + 1, s.id, s.dist, snippet(payload));
    }
    Ok(out)
}

pub fn search(a: SearchArgs, file: FileConfig) -> anyhow::Result<()> {
    let mut texts = a.queries.clone();
    if let Some(f) = &a.query_file {
        texts.extend(read_lines(f)?);
    }
    if texts.is_empty() {
        return Err(usage("no query given; pass query text or --query-file".into()));
    }
    if a.threads == 0 {
        return Err(usage("--threads must be at least 1".into()));
    }
    let index = open(&a.index.dir, file)?;
    let params = search_params(&index.meta().search, &a.flags)?;
    let run = |t: &String| -> anyhow::Result<String> {
        let q = query_vector(&index, t)?;
        render(&index, &index.search(&q, &params)?, a.report)
    };
    let blocks: Vec<anyhow::Result<String>> = if a.threads == 1 {
        texts.iter().map(run).collect()
    } else {
        let chunk = texts.len().div_ceil(a.threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = texts
                .chunks(chunk)
                .map(|part| s.spawn(|| part.iter().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("search thread panicked"))
                .collect()
        })
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let many = texts.len() > 1 && !a.report;
    for (i, b) in blocks.into_iter().enumerate() {
        if many {
            writeln!(out, "# query {i}: {}", texts[i])?;
        }
        out.write_all(b?.as_bytes())?;
    }
    Ok(())
}

pub fn add(a: AddArgs, file: FileConfig) -> anyhow::Result<()> {
    let mut contents = a.contents.clone();
    if let Some(f) = &a.file {
        contents.extend(read_lines(f)?);
    }
    if contents.is_empty() {
        return Err(usage("nothing to add; pass contents or --file".into()));
    }
    let mut index = open(&a.index.dir, file)?;
    for c in &contents {
        if a.buffered {
            let id = index.buffered_add(c.as_bytes())?;
            println!("{id}\tbuffered");
        } else {
            let out = index.add(c.as_bytes(), a.variant)?;
            println!(
                "{}\t{}\tdistances {}\tembeddings {}",
                out.id, a.variant, out.cost.distance_computations, out.cost.embedding_computations
            );
        }
    }
    Ok(())
}

pub fn delete(a: DeleteArgs, file: FileConfig) -> anyhow::Result<()> {
    let mut index = open(&a.index.dir, file)?;
    for &id in &a.ids {
        let out = index.delete(id)?;
        println!(
            "{id}\t{}\tdeleted_fraction {:.4}",
            if out.changed { "deleted" } else { "already deleted" },
            out.deleted_fraction
        );
        if out.advisory {
            eprintln!("warning: more than {:.0}% of nodes are deleted; consider rebuilding", 100.0 * hubgraph::update::DEFAULT_REBUILD_THRESHOLD);
        }
    }
    Ok(())
}

pub fn drain(a: IndexArg, file: FileConfig) -> anyhow::Result<()> {
    let mut index = open(&a.dir, file)?;
    let pending = index.buffer().len();
    let cost = index.drain()?;
    println!(
        "drained {pending} items\tdistances {}\tembeddings {}",
        cost.distance_computations, cost.embedding_computations
    );
    Ok(())
}

pub fn compact(a: IndexArg, file: FileConfig) -> anyhow::Result<()> {
    let mut index = open(&a.dir, file)?;
    index.compact()?;
    println!("compacted {} nodes in {}", index.len(), a.dir.display());
    Ok(())
}

struct Measured {
    recall: f64,
    recomputations: f64,
    approx_lookups: f64,
}

fn measure(index: &Index, queries: &[Vector], truth: &GroundTruth, p: &SearchParams) -> anyhow::Result<Measured> {
    let (mut rc, mut al) = (0usize, 0usize);
    let mut results = Vec::with_capacity(queries.len());
    for q in queries {
        let r = index.search(q, p)?;
        rc += r.recomputations;
        al += r.approx_lookups;
        results.push(r.ids());
    }
    let nq = queries.len() as f64;
    Ok(Measured {
        recall: mean_recall(&results, truth)?,
        recomputations: rc as f64 / nq,
        approx_lookups: al as f64 / nq,
    })
}

pub fn eval(a: EvalArgs, file: FileConfig) -> anyhow::Result<()> {
    let dir = &a.index.dir;
    if !dir.join(META_FILE).exists() {
        return Err(missing_index(dir));
    }
    if !a.queries.exists() {
        return Err(usage(format!("query file {} does not exist", a.queries.display())));
    }
    let texts = read_lines(&a.queries)?;
    if texts.is_empty() {
        bail!(hubgraph::Error::InvalidArgument(format!("{} holds no queries", a.queries.display())));
    }
    let index = open(dir, file)?;
    let meta: IndexMeta = index.meta().clone();
    let template = search_params(&meta.search, &a.flags)?;
    let k = template.k;
    let queries: Vec<Vector> = texts.iter().map(|t| query_vector(&index, t)).collect::<anyhow::Result<_>>()?;
    let ids = queries
        .iter()
        .map(|q| Ok(index.brute_force(q, k)?.iter().map(|s| s.id).collect()))
        .collect::<anyhow::Result<Vec<Vec<u32>>>>()?;
    let truth = GroundTruth {
        k,
        metric: meta.metric,
        ids,
    };
    let n = index.len();
    let mut table = String::from("mode\talpha\tbatch\tef\trecall\trecomputations\tapprox_lookups\n");
    let modes = [
        SearchParams {
            mode: SearchMode::TwoLevel,
            ..template.clone()
        },
        SearchParams {
            mode: SearchMode::ExactBestFirst,
            alpha: 100.0,
            batch_threshold: 1,
            ..template.clone()
        },
    ];
    for t in &modes {
        let at = |ef: usize| SearchParams { ef, ..t.clone() };
        let tuning = tune_ef(k, a.max_ef.min(n).max(k), a.target, |ef| {
            measure(&index, &queries, &truth, &at(ef))
                .map(|m| m.recall)
                .map_err(|e| hubgraph::Error::InvalidArgument(format!("{e:#}")))
        })?;
        match tuning {
            EfTuning::Found { ef, .. } => {
                let m = measure(&index, &queries, &truth, &at(ef))?;
                let _ = writeln!(
                    table,
                    "{}\t{}\t{}\t{ef}\t{:.6}\t{:.3}\t{:.3}",
                    t.mode, t.alpha, t.batch_threshold, m.recall, m.recomputations, m.approx_lookups
                );
            }
            EfTuning::Infeasible { best_recall } => {
                let _ = writeln!(
                    table,
                    "{}\t{}\t{}\tinfeasible\t{best_recall:.6}\t-\t-",
                    t.mode, t.alpha, t.batch_threshold
                );
            }
        }
    }
    print!("{table}");
    let out_dir = a.out.clone().unwrap_or_else(|| dir.join("eval"));
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("tuned.tsv"), &table)?;
    if a.ablation {
        let graph_n = index.graph().len();
        let node_ids: Vec<u32> = (0..graph_n as u32).collect();
        let vectors = embed_items(index.items(), &node_ids, index.provider(), meta.metric)?;
        let variants = Variants::build(&vectors, &meta.build, 0.5)?;
        let gt = GroundTruth::compute(&vectors, &queries, k, meta.metric);
        let cfg = AblationConfig {
            k,
            target_recall: a.target,
            max_ef: a.max_ef,
            batch_threshold: template.batch_threshold,
            ..AblationConfig::default()
        };
        let (pq, codes) = index.pq();
        let out = run_ablation(&variants, &queries, &gt, &index.source(), pq, codes, &cfg)?;
        out.write_dir(&out_dir)?;
        print!("{}", out.matched_tsv());
    }
    eprintln!("tables written to {}", out_dir.display());
    Ok(())
}
