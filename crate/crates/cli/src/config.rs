use std::path::Path;

use anyhow::Context;
use hubgraph::builder::{default_low_degree, BuildParams};
use hubgraph::index::{IndexConfig, DEFAULT_BUFFER_BYTES};
use hubgraph::search::SearchParams;
use hubgraph::vectors::{ProviderConfig, ProviderKind};
use serde::Deserialize;

use crate::args::{BuildArgs, SearchFlags};

pub const ENV_ENDPOINT: &str = "HUBGRAPH_ENDPOINT";
pub const ENV_TIMEOUT_MS: &str = "HUBGRAPH_TIMEOUT_MS";
pub const ENV_RETRIES: &str = "HUBGRAPH_RETRIES";
pub const ENV_MAX_BATCH: &str = "HUBGRAPH_MAX_BATCH";

const DEFAULT_DIM: usize = 32;

/// `--config` contents; every table is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub shards: Option<usize>,
    pub buffer_bytes: Option<usize>,
    pub provider: Option<ProviderConfig>,
    pub build: Option<BuildParams>,
    pub search: Option<SearchParams>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| crate::usage(format!("config {}: {e}", path.display())))
    }
}

fn env_parse<T: std::str::FromStr>(name: &str) -> anyhow::Result<Option<T>> {
    match std::env::var(name) {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| crate::usage(format!("{name}={v:?} is not valid"))),
        Err(_) => Ok(None),
    }
}

/// Applies transport overrides from the environment. They never change the
/// encoder identity.
pub fn apply_env(p: &mut ProviderConfig) -> anyhow::Result<()> {
    if let Ok(e) = std::env::var(ENV_ENDPOINT) {
        p.endpoint = Some(e);
    }
    if let Some(t) = env_parse(ENV_TIMEOUT_MS)? {
        p.timeout_ms = t;
    }
    if let Some(r) = env_parse(ENV_RETRIES)? {
        p.retries = r;
    }
    if let Some(b) = env_parse(ENV_MAX_BATCH)? {
        p.max_batch = b;
    }
    Ok(())
}

/// Defaults, then the config file, then flags, then the environment.
pub fn build_config(file: FileConfig, a: &BuildArgs) -> anyhow::Result<IndexConfig> {
    let mut build = file.build.unwrap_or_default();
    if let Some(seed) = a.seed {
        build.seed = seed;
    }
    if let Some(mm) = a.max_degree {
        build = build.with_max_degree(mm);
    }
    if let Some(m) = a.low_degree {
        build.low_degree = m;
    } else if a.max_degree.is_none() && build.low_degree >= build.max_degree {
        build.low_degree = default_low_degree(build.max_degree);
    }
    if let Some(b) = a.beta {
        build.hub_percent = b;
    }
    if let Some(e) = a.efc {
        build.ef_construction = e;
    }
    if a.budget_bytes.is_some() {
        build.budget_bytes = a.budget_bytes;
    }
    if a.pq_m.is_some() {
        build.pq_subspaces = a.pq_m;
    }
    let p = &a.provider;
    let mut provider = file
        .provider
        .unwrap_or_else(|| ProviderConfig::synthetic(p.dim.unwrap_or(DEFAULT_DIM), build.seed));
    if let Some(kind) = p.provider {
        provider.kind = kind;
    }
    if let Some(d) = p.dim {
        provider.dim = d;
    }
    if let Some(s) = p.provider_seed {
        provider.seed = s;
    } else if a.seed.is_some() && provider.kind == ProviderKind::Synthetic {
        provider.seed = build.seed;
    }
    if p.endpoint.is_some() {
        provider.endpoint = p.endpoint.clone();
    }
    apply_env(&mut provider)?;
    let mut cfg = IndexConfig::new(provider, build);
    cfg.search = file.search.unwrap_or_default();
    cfg.shards = a.shards.or(file.shards).unwrap_or(1);
    cfg.buffer_bytes = a.buffer_bytes.or(file.buffer_bytes).unwrap_or(DEFAULT_BUFFER_BYTES);
    cfg.validate().map_err(anyhow::Error::from)?;
    Ok(cfg)
}

/// Search defaults recorded at build time, overridden by flags.
pub fn search_params(base: &SearchParams, f: &SearchFlags) -> anyhow::Result<SearchParams> {
    let mut p = base.clone();
    if let Some(k) = f.k {
        p.k = k;
    }
    if let Some(m) = f.mode {
        p.mode = m;
    }
    if let Some(a) = f.alpha {
        p.alpha = a;
    }
    if let Some(b) = f.batch {
        p.batch_threshold = b;
    }
    if f.cache_frac.is_some() {
        p.cache_fraction = f.cache_frac;
    }
    match f.ef {
        Some(ef) => p.ef = ef,
        None => p.ef = p.ef.max(p.k),
    }
    p.validate()?;
    Ok(p)
}
