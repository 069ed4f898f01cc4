use serde::{Deserialize, Serialize};

use super::GroundTruth;
use crate::builder::{embed_items, BuildParams};
use crate::error::{Error, Result};
use crate::items::ItemStore;
use crate::vectors::{SyntheticProvider, Vector};

const STANDARD: &str = include_str!("../../fixtures/standard.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub n: usize,
    pub dim: usize,
    pub queries: usize,
    pub k: usize,
    pub seed: u64,
    pub item_prefix: String,
    pub query_prefix: String,
    pub build: BuildParams,
}

impl FixtureConfig {
    /// The committed standard workload.
    pub fn standard() -> Self {
        Self::from_toml(STANDARD).expect("committed fixture config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("fixture config: {e}")))
    }

    /// Same workload at a different size.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn provider(&self) -> SyntheticProvider {
        SyntheticProvider::new(self.dim, self.seed)
    }

    pub fn item_text(&self, i: usize) -> String {
        format!("{}-{i:06}", self.item_prefix)
    }

    pub fn query_text(&self, i: usize) -> String {
        format!("{}-{i:04}", self.query_prefix)
    }
}

/// A generated workload with exact vectors kept for oracles.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub config: FixtureConfig,
    pub items: ItemStore,
    pub vectors: Vec<Vector>,
    pub queries: Vec<Vector>,
    pub truth: GroundTruth,
}

impl Fixture {
    pub fn generate(config: FixtureConfig) -> Result<Self> {
        let provider = config.provider();
        let metric = config.build.metric;
        let items = ItemStore::from_items((0..config.n).map(|i| config.item_text(i)));
        let ids: Vec<u32> = (0..config.n as u32).collect();
        let vectors = embed_items(&items, &ids, &provider, metric)?;
        let qstore = ItemStore::from_items((0..config.queries).map(|i| config.query_text(i)));
        let qids: Vec<u32> = (0..config.queries as u32).collect();
        let queries = embed_items(&qstore, &qids, &provider, metric)?;
        let truth = GroundTruth::compute(&vectors, &queries, config.k, metric);
        Ok(Self {
            config,
            items,
            vectors,
            queries,
            truth,
        })
    }

    pub fn standard() -> Result<Self> {
        Self::generate(FixtureConfig::standard())
    }
}
