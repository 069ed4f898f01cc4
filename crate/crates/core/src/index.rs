//! The index directory: graph, PQ codes, items, metadata and the mutation
//! log, plus the mutable in-memory index built on top of them.
//!
//! ```text
//! <dir>/meta.txt        TOML metadata (see IndexMeta)
//! <dir>/graph.bin       frozen graph
//! <dir>/deleted.bin     soft-delete bitset
//! <dir>/pq.bin          PQ codebooks and codes
//! <dir>/items.dat/.idx  raw payloads
//! <dir>/mutations.log   JSON lines appended since the last compaction
//! <dir>/.lock           held while a process has the directory open
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::builder::{build_index, embed_items, prepare_vector, BuildParams, BuildReport};
use crate::error::{Error, Result};
use crate::graph::{self, GraphView, PrunedGraph};
use crate::instrument::ResidentTracker;
use crate::items::ItemStore;
use crate::pq::{load_pq, save_pq, PqCodes, PqModel};
use crate::scored::Scored;
use crate::search::{search, EmbeddingCache, RecomputeSource, SearchMode, SearchParams, SearchReport};
use crate::shardbuild::build_sharded;
use crate::update::{
    add_node, delete, merge_topk, AddBuffer, AddContext, AddCost, AddParams, AddVariant, DeleteOutcome, OverlayGraph,
    DEFAULT_REBUILD_THRESHOLD,
};
use crate::vectors::{EmbeddingProvider, EmbeddingRequest, Metric, ProviderConfig, Vector};

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.txt";
pub const PQ_FILE: &str = "pq.bin";
pub const LOG_FILE: &str = "mutations.log";
pub const LOCK_FILE: &str = ".lock";
pub const SHARD_DIR: &str = "shards";

/// Default add-buffer budget: 4 MiB.
pub const DEFAULT_BUFFER_BYTES: usize = 4 << 20;

fn one() -> usize {
    1
}

fn default_buffer_bytes() -> usize {
    DEFAULT_BUFFER_BYTES
}

/// Everything needed to build an index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    #[serde(default = "one")]
    pub shards: usize,
    #[serde(default = "default_buffer_bytes")]
    pub buffer_bytes: usize,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub build: BuildParams,
    #[serde(default)]
    pub search: SearchParams,
}

impl IndexConfig {
    pub fn new(provider: ProviderConfig, build: BuildParams) -> Self {
        Self {
            shards: 1,
            buffer_bytes: DEFAULT_BUFFER_BYTES,
            provider,
            build,
            search: SearchParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.provider.validate()?;
        self.build.validate()?;
        self.search.validate()?;
        if self.shards == 0 {
            return Err(Error::InvalidArgument("need at least one shard".into()));
        }
        Ok(())
    }
}

/// Contents of `meta.txt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub format_version: u32,
    /// Graph nodes at the last compaction.
    pub n: usize,
    pub dim: usize,
    pub metric: Metric,
    pub provider_hash: String,
    pub seed: u64,
    pub shards: usize,
    pub buffer_bytes: usize,
    pub provider: ProviderConfig,
    pub build: BuildParams,
    pub search: SearchParams,
}

impl IndexMeta {
    fn new(config: &IndexConfig, n: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n,
            dim: config.provider.dim,
            metric: config.build.metric,
            provider_hash: config.provider.encoder_hash(),
            seed: config.build.seed,
            shards: config.shards,
            buffer_bytes: config.buffer_bytes,
            provider: config.provider.clone(),
            build: config.build.clone(),
            search: config.search.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("meta", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let meta: IndexMeta = toml::from_str(text).map_err(|e| Error::format("meta", e.to_string()))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::format(
                "meta",
                format!("unsupported format version {}", meta.format_version),
            ));
        }
        if meta.provider_hash != meta.provider.encoder_hash() {
            return Err(Error::format("meta", "provider hash does not match the provider section"));
        }
        Ok(meta)
    }

    /// Fails with [`Error::ProviderMismatch`] unless `current` embeds like
    /// the provider the index was built with.
    pub fn check_provider(&self, current: &ProviderConfig) -> Result<()> {
        let actual = current.encoder_hash();
        if actual != self.provider_hash {
            return Err(Error::ProviderMismatch {
                expected: self.provider_hash.clone(),
                actual,
            });
        }
        Ok(())
    }
}

/// Exclusive claim on an index directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(format!(
                "{} exists; another process is using the index (remove the file if it is stale)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Item payload in the mutation log: text when valid UTF-8, else hex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Payload {
    Text(String),
    Hex { hex: String },
}

impl Payload {
    fn new(bytes: &[u8]) -> Self {
        match std::str::from_utf8(bytes) {
            Ok(s) => Payload::Text(s.to_string()),
            Err(_) => Payload::Hex {
                hex: bytes.iter().map(|b| format!("{b:02x}")).collect(),
            },
        }
    }

    fn into_bytes(self) -> Result<Vec<u8>> {
        match self {
            Payload::Text(s) => Ok(s.into_bytes()),
            Payload::Hex { hex } => {
                if hex.len() % 2 != 0 {
                    return Err(Error::format("mutation log", "odd-length hex payload"));
                }
                (0..hex.len())
                    .step_by(2)
                    .map(|i| {
                        u8::from_str_radix(&hex[i..i + 2], 16)
                            .map_err(|_| Error::format("mutation log", "bad hex payload"))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Mutation {
    Add { id: u32, variant: AddVariant, content: Payload },
    Buffer { id: u32, content: Payload },
    Drain,
    Delete { id: u32 },
}

/// Result of one add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddOutcome {
    pub id: u32,
    /// Includes the embedding of the new item itself.
    pub cost: AddCost,
}

/// A loaded or freshly built index.
pub struct Index {
    meta: IndexMeta,
    graph: OverlayGraph,
    pq: PqModel,
    codes: PqCodes,
    items: ItemStore,
    provider: Box<dyn EmbeddingProvider>,
    buffer: AddBuffer,
    cache: Mutex<Option<(f64, Arc<EmbeddingCache>)>>,
    dir: Option<PathBuf>,
    log: Option<File>,
    lock: Option<DirLock>,
    report: Option<BuildReport>,
    rebuild_threshold: f64,
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("n", &self.graph.len())
            .field("items", &self.items.len())
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

impl Index {
    /// Builds in memory with the provider described by the config.
    pub fn build(items: ItemStore, config: &IndexConfig) -> Result<Self> {
        let provider = config.provider.connect()?;
        Self::build_with_provider(items, config, provider, &ResidentTracker::new(), None)
    }

    /// Builds in memory with an explicit provider. `shard_dir` receives the
    /// intermediate shard graphs of a sharded build.
    pub fn build_with_provider(
        items: ItemStore,
        config: &IndexConfig,
        provider: Box<dyn EmbeddingProvider>,
        tracker: &ResidentTracker,
        shard_dir: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        if provider.dim() != config.provider.dim {
            return Err(Error::DimensionMismatch {
                expected: config.provider.dim,
                actual: provider.dim(),
            });
        }
        let built = if config.shards > 1 {
            build_sharded(&items, &config.build, config.shards, &*provider, tracker, shard_dir)?
        } else {
            build_index(&items, &config.build, &*provider, tracker)?
        };
        let meta = IndexMeta::new(config, built.graph.len());
        Ok(Self {
            buffer: AddBuffer::new(meta.dim, meta.buffer_bytes),
            meta,
            graph: OverlayGraph::new(built.graph),
            pq: built.pq,
            codes: built.codes,
            items,
            provider,
            cache: Mutex::new(None),
            dir: None,
            log: None,
            lock: None,
            report: Some(built.report),
            rebuild_threshold: DEFAULT_REBUILD_THRESHOLD,
        })
    }

    /// Builds into `dir` and keeps it open. Shard graphs are written under
    /// `dir/shards` during the build and removed afterwards unless
    /// `keep_shards` is set.
    pub fn create(dir: &Path, items: ItemStore, config: &IndexConfig, keep_shards: bool) -> Result<Self> {
        let lock = DirLock::acquire(dir)?;
        let shard_dir = dir.join(SHARD_DIR);
        let provider = config.provider.connect()?;
        let built = Self::build_with_provider(
            items,
            config,
            provider,
            &ResidentTracker::new(),
            (config.shards > 1).then_some(shard_dir.as_path()),
        );
        if !keep_shards && shard_dir.exists() {
            std::fs::remove_dir_all(&shard_dir)?;
        }
        let mut index = built?;
        index.lock = Some(lock);
        index.write_all(dir)?;
        index.open_log(dir)?;
        index.dir = Some(dir.to_path_buf());
        Ok(index)
    }

    /// Opens `dir` with the provider recorded in its metadata.
    pub fn open(dir: &Path) -> Result<Self> {
        Self::open_inner(dir, None)
    }

    /// Opens `dir`, embedding through `current`, which must have the same
    /// encoder identity as the index.
    pub fn open_with_provider(dir: &Path, current: &ProviderConfig) -> Result<Self> {
        Self::open_inner(dir, Some(current))
    }

    fn open_inner(dir: &Path, current: Option<&ProviderConfig>) -> Result<Self> {
        let lock = DirLock::acquire(dir)?;
        let meta = Self::read_meta(dir)?;
        if let Some(c) = current {
            meta.check_provider(c)?;
            if c.dim != meta.dim {
                return Err(Error::DimensionMismatch {
                    expected: meta.dim,
                    actual: c.dim,
                });
            }
        }
        let provider = current.unwrap_or(&meta.provider).connect()?;
        let g = graph::load(dir)?;
        let (pq, codes) = load_pq(&dir.join(PQ_FILE))?;
        let items = ItemStore::load(dir)?;
        if g.len() != meta.n || codes.len() != meta.n || items.len() != meta.n {
            return Err(Error::format(
                "meta",
                format!(
                    "node counts disagree: meta {}, graph {}, codes {}, items {}",
                    meta.n,
                    g.len(),
                    codes.len(),
                    items.len()
                ),
            ));
        }
        if pq.dim() != meta.dim {
            return Err(Error::format("pq", "codebook dimension does not match meta"));
        }
        let mut index = Self {
            buffer: AddBuffer::new(meta.dim, meta.buffer_bytes),
            meta,
            graph: OverlayGraph::new(g),
            pq,
            codes,
            items,
            provider,
            cache: Mutex::new(None),
            dir: None,
            log: None,
            lock: Some(lock),
            report: None,
            rebuild_threshold: DEFAULT_REBUILD_THRESHOLD,
        };
        index.replay(dir)?;
        index.open_log(dir)?;
        index.dir = Some(dir.to_path_buf());
        Ok(index)
    }

    pub fn read_meta(dir: &Path) -> Result<IndexMeta> {
        let text = std::fs::read_to_string(dir.join(META_FILE))?;
        IndexMeta::from_toml(&text)
    }

    fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let frozen = self.graph.compact();
        graph::save(&frozen, dir)?;
        save_pq(&dir.join(PQ_FILE), &self.pq, &self.codes)?;
        self.items.save(dir)?;
        let mut meta = self.meta.clone();
        meta.n = frozen.len();
        std::fs::write(dir.join(META_FILE), meta.to_toml()?)?;
        // the state on disk now includes every logged mutation
        File::create(dir.join(LOG_FILE))?.sync_all()?;
        Ok(())
    }

    fn open_log(&mut self, dir: &Path) -> Result<()> {
        self.log = Some(OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?);
        Ok(())
    }

    fn append(&mut self, m: &Mutation) -> Result<()> {
        if let Some(f) = self.log.as_mut() {
            let mut line = serde_json::to_string(m).map_err(|e| Error::format("mutation log", e.to_string()))?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        Ok(())
    }

    fn replay(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join(LOG_FILE);
        if !path.exists() {
            return Ok(());
        }
        let reader = BufReader::new(File::open(&path)?);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let m: Mutation = serde_json::from_str(&line)
                .map_err(|e| Error::format("mutation log", format!("line {}: {e}", lineno + 1)))?;
            let expect = |id: u32, got: u32| {
                if id == got {
                    Ok(())
                } else {
                    Err(Error::format(
                        "mutation log",
                        format!("line {}: replay produced id {got}, log says {id}", lineno + 1),
                    ))
                }
            };
            match m {
                Mutation::Add { id, variant, content } => {
                    let out = self.add_inner(&content.into_bytes()?, variant)?;
                    expect(id, out.id)?;
                }
                Mutation::Buffer { id, content } => {
                    let got = self.buffer_inner(&content.into_bytes()?)?;
                    expect(id, got)?;
                }
                Mutation::Drain => {
                    self.drain_inner()?;
                }
                Mutation::Delete { id } => {
                    self.delete_inner(id)?;
                }
            }
        }
        Ok(())
    }

    /// Drains the buffer, refreezes the graph and rewrites the directory;
    /// the mutation log is emptied.
    pub fn compact(&mut self) -> Result<()> {
        if !self.buffer.is_empty() {
            self.drain()?;
        }
        let frozen = self.graph.compact();
        frozen.validate()?;
        self.meta.n = frozen.len();
        self.graph = OverlayGraph::new(frozen);
        if let Some(dir) = self.dir.clone() {
            self.log = None;
            self.write_all(&dir)?;
            self.open_log(&dir)?;
        }
        Ok(())
    }

    /// Writes a compacted copy to `dir` and continues from there.
    pub fn save_to(&mut self, dir: &Path) -> Result<()> {
        if self.dir.as_deref() != Some(dir) {
            self.lock = Some(DirLock::acquire(dir)?);
            self.dir = Some(dir.to_path_buf());
        }
        self.compact()
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn graph(&self) -> &OverlayGraph {
        &self.graph
    }

    pub fn pq(&self) -> (&PqModel, &PqCodes) {
        (&self.pq, &self.codes)
    }

    pub fn items(&self) -> &ItemStore {
        &self.items
    }

    pub fn buffer(&self) -> &AddBuffer {
        &self.buffer
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        &*self.provider
    }

    /// Present only on indexes built in this process.
    pub fn build_report(&self) -> Option<&BuildReport> {
        self.report.as_ref()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Linked graph nodes (excludes buffered items).
    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn set_rebuild_threshold(&mut self, threshold: f64) {
        self.rebuild_threshold = threshold;
    }

    /// Replaces the provider; it must have the index dimension.
    pub fn set_provider(&mut self, provider: Box<dyn EmbeddingProvider>) -> Result<()> {
        if provider.dim() != self.meta.dim {
            return Err(Error::DimensionMismatch {
                expected: self.meta.dim,
                actual: provider.dim(),
            });
        }
        self.provider = provider;
        *self.cache.lock().expect("cache lock") = None;
        Ok(())
    }

    pub fn source(&self) -> RecomputeSource<'_> {
        RecomputeSource {
            items: &self.items,
            provider: &*self.provider,
            metric: self.meta.metric,
        }
    }

    /// Embeds query content with the index provider.
    pub fn embed_query(&self, content: &[u8]) -> Result<Vector> {
        let v = self
            .provider
            .embed(&[EmbeddingRequest::new(u64::MAX, content)])?
            .pop()
            .ok_or_else(|| Error::Protocol("provider returned no vector".into()))?;
        prepare_vector(v, self.meta.dim, self.meta.metric)
    }

    fn cache_for(&self, fraction: Option<f64>) -> Result<Option<Arc<EmbeddingCache>>> {
        let Some(f) = fraction else {
            return Ok(None);
        };
        let mut slot = self.cache.lock().expect("cache lock");
        if let Some((have, c)) = slot.as_ref() {
            if *have == f {
                return Ok(Some(c.clone()));
            }
        }
        let c = Arc::new(EmbeddingCache::build(&self.graph, f, &self.source())?);
        *slot = Some((f, c.clone()));
        Ok(Some(c))
    }

    /// Graph search merged with a scan of the add buffer.
    pub fn search(&self, q: &[f32], params: &SearchParams) -> Result<SearchReport> {
        let cache = self.cache_for(params.cache_fraction)?;
        let pq = (params.mode == SearchMode::TwoLevel).then_some((&self.pq, &self.codes));
        let mut report = search(&self.graph, q, params, &self.source(), pq, cache.as_deref())?;
        if !self.buffer.is_empty() {
            let scanned = self.buffer.scan(q, self.meta.metric);
            report.results = merge_topk(&report.results, &scanned, params.k);
        }
        Ok(report)
    }

    pub fn search_content(&self, content: &[u8], params: &SearchParams) -> Result<SearchReport> {
        let q = self.embed_query(content)?;
        self.search(&q, params)
    }

    fn add_params(&self) -> AddParams {
        AddParams::from_build(&self.meta.build)
    }

    fn add_inner(&mut self, content: &[u8], variant: AddVariant) -> Result<AddOutcome> {
        if !self.buffer.is_empty() {
            self.drain_inner()?;
        }
        let id = self.items.push(content);
        let params = self.add_params();
        let result = (|| {
            let v = embed_items(&self.items, &[id], &*self.provider, self.meta.metric)?
                .pop()
                .expect("one row");
            let code = self.pq.encode(&v)?;
            let ctx = AddContext {
                items: &self.items,
                provider: &*self.provider,
                held: None,
            };
            let (nid, mut cost) = add_node(&mut self.graph, &ctx, &v, variant, &params, None)?;
            debug_assert_eq!(nid, id);
            self.codes.push(&code);
            cost.embedding_computations += 1;
            Ok(AddOutcome { id, cost })
        })();
        if result.is_err() {
            self.items.truncate(id as usize);
        }
        result
    }

    /// Embeds and links one item; durable once this returns.
    pub fn add(&mut self, content: &[u8], variant: AddVariant) -> Result<AddOutcome> {
        let out = self.add_inner(content, variant)?;
        self.append(&Mutation::Add {
            id: out.id,
            variant,
            content: Payload::new(content),
        })?;
        Ok(out)
    }

    fn buffer_inner(&mut self, content: &[u8]) -> Result<u32> {
        if !self.buffer.has_room() {
            self.drain_inner()?;
        }
        let id = self.items.push(content);
        let embedded = embed_items(&self.items, &[id], &*self.provider, self.meta.metric)
            .map(|mut v| v.pop().expect("one row"))
            .and_then(|v| self.buffer.push(id, v));
        if let Err(e) = embedded {
            self.items.truncate(id as usize);
            return Err(e);
        }
        Ok(id)
    }

    /// Embeds an item into the add buffer, where searches see it at once.
    /// A full buffer is drained first.
    pub fn buffered_add(&mut self, content: &[u8]) -> Result<u32> {
        if !self.buffer.has_room() && !self.buffer.is_empty() {
            self.drain()?;
        }
        let id = self.buffer_inner(content)?;
        self.append(&Mutation::Buffer {
            id,
            content: Payload::new(content),
        })?;
        Ok(id)
    }

    fn drain_inner(&mut self) -> Result<AddCost> {
        let params = self.add_params();
        let pq = &self.pq;
        let codes = &mut self.codes;
        self.buffer.drain(&mut self.graph, &self.items, &*self.provider, &params, |_, v| {
            codes.push(&pq.encode(v)?);
            Ok(())
        })
    }

    /// Links every buffered item into the graph (simplified variant).
    pub fn drain(&mut self) -> Result<AddCost> {
        if self.buffer.is_empty() {
            return Ok(AddCost::default());
        }
        let cost = self.drain_inner()?;
        self.append(&Mutation::Drain)?;
        Ok(cost)
    }

    fn delete_inner(&mut self, id: u32) -> Result<DeleteOutcome> {
        if id as usize >= self.graph.len() && (id as usize) < self.items.len() {
            self.drain_inner()?;
        }
        delete(&mut self.graph, id, self.rebuild_threshold)
    }

    pub fn delete(&mut self, id: u32) -> Result<DeleteOutcome> {
        let buffered = id as usize >= self.graph.len() && (id as usize) < self.items.len();
        if buffered {
            self.drain()?;
        }
        let out = self.delete_inner(id)?;
        if out.changed {
            self.append(&Mutation::Delete { id })?;
        }
        Ok(out)
    }

    /// Exact top-k over the linked active nodes and the buffer by linear
    /// scan, for tests and small indexes.
    pub fn brute_force(&self, q: &[f32], k: usize) -> Result<Vec<Scored>> {
        let n = self.items.len() as u32;
        let ids: Vec<u32> = (0..n)
            .filter(|&i| (i as usize) >= self.graph.len() || !self.graph.is_deleted(i))
            .collect();
        let vs = embed_items(&self.items, &ids, &*self.provider, self.meta.metric)?;
        let mut all: Vec<Scored> = ids
            .iter()
            .zip(&vs)
            .map(|(&id, v)| Scored::new(self.meta.metric.eval(q, v), id))
            .collect();
        all.sort();
        all.truncate(k);
        Ok(all)
    }

    /// Frozen copy of the current graph.
    pub fn snapshot(&self) -> PrunedGraph {
        self.graph.compact()
    }

    /// Degree and byte accounting of the current graph.
    pub fn stats(&self) -> graph::GraphStats {
        graph::degree_stats(&self.graph)
    }
}

#[cfg(test)]
mod tests;
