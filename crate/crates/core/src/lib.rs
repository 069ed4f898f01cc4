//! Graph-based approximate nearest neighbor index that keeps only a pruned
//! proximity graph and PQ codes on disk, and recomputes exact embeddings at
//! query time through an [`EmbeddingProvider`](vectors::EmbeddingProvider).

pub mod builder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod index;
pub mod instrument;
pub mod items;
pub(crate) mod kmeans;
pub mod pq;
pub mod scored;
pub mod search;
pub mod shardbuild;
pub mod update;
pub mod vectors;

pub use error::{Error, Result};
pub use scored::Scored;
