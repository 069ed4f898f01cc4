use std::collections::HashMap;

use super::{ExactSource, StageTimes};
use crate::builder::hub_count;
use crate::error::{Error, Result};
use crate::graph::GraphView;
use crate::vectors::Vector;

/// Pinned exact vectors of the highest-degree nodes.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingCache {
    vectors: HashMap<u32, Vector>,
}

impl EmbeddingCache {
    /// Precomputes the `ceil(fraction * n / 100)` nodes with the largest
    /// base-level degree (ties to the lower id).
    pub fn build<G: GraphView + ?Sized>(g: &G, fraction: f64, source: &dyn ExactSource) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 100.0) {
            return Err(Error::InvalidArgument(format!(
                "cache fraction must be in (0, 100], got {fraction}"
            )));
        }
        let n = g.node_count();
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| {
            g.neighbors(b, 0)
                .len()
                .cmp(&g.neighbors(a, 0).len())
                .then(a.cmp(&b))
        });
        order.truncate(hub_count(fraction, n));
        let mut vectors = HashMap::with_capacity(order.len());
        let mut times = StageTimes::default();
        for chunk in order.chunks(256) {
            let vs = source.fetch(chunk, &mut times)?;
            vectors.extend(chunk.iter().copied().zip(vs));
        }
        Ok(Self { vectors })
    }

    #[inline]
    pub fn get(&self, id: u32) -> Option<&Vector> {
        self.vectors.get(&id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.vectors.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}
