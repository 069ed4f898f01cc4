use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{parse_literal, Vector};
use crate::error::{Error, Result};

/// One item to embed: its node id and raw payload.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingRequest<'a> {
    pub item_id: u64,
    pub content: &'a [u8],
}

impl<'a> EmbeddingRequest<'a> {
    pub fn new(item_id: u64, content: &'a [u8]) -> Self {
        Self { item_id, content }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Synthetic,
    External,
    /// Content is itself a bracketed float list.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_max_batch() -> usize {
    64
}
fn default_timeout_ms() -> u64 {
    10_000
}
fn default_retries() -> u32 {
    2
}

impl ProviderConfig {
    pub fn synthetic(dim: usize, seed: u64) -> Self {
        Self {
            kind: ProviderKind::Synthetic,
            dim,
            seed,
            endpoint: None,
            max_batch: default_max_batch(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
        }
    }

    pub fn literal(dim: usize) -> Self {
        Self {
            kind: ProviderKind::Literal,
            ..Self::synthetic(dim, 0)
        }
    }

    pub fn external(dim: usize, endpoint: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::External,
            endpoint: Some(endpoint.into()),
            ..Self::synthetic(dim, 0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_batch == 0 {
            return Err(Error::InvalidArgument("max_batch must be >= 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidArgument("provider dim must be >= 2".into()));
        }
        if self.kind == ProviderKind::External && self.endpoint.is_none() {
            return Err(Error::InvalidArgument(
                "external provider requires an endpoint".into(),
            ));
        }
        Ok(())
    }

    /// Identity of the encoder: kind, dim and seed. Transport settings
    /// (endpoint, batch size, timeouts) do not change the vectors and are
    /// excluded.
    pub fn encoder_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}|{}|{}", self.kind, self.dim, self.seed).as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn connect(&self) -> Result<Box<dyn EmbeddingProvider>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Synthetic => Box::new(SyntheticProvider::new(self.dim, self.seed)
                .with_max_batch(self.max_batch)),
            ProviderKind::Literal => {
                Box::new(LiteralProvider::new(self.dim).with_max_batch(self.max_batch))
            }
            ProviderKind::External => Box::new(super::ExternalProvider::new(self)?),
        })
    }
}

/// Maps item content to an embedding. Implementations must be pure: the same
/// content always yields a bit-identical vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Largest request count accepted by a single [`EmbeddingProvider::embed`] call.
    fn max_batch(&self) -> usize;

    /// Embeds at most `max_batch()` requests in one provider call.
    fn embed(&self, requests: &[EmbeddingRequest<'_>]) -> Result<Vec<Vector>>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn max_batch(&self) -> usize {
        (**self).max_batch()
    }
    fn embed(&self, requests: &[EmbeddingRequest<'_>]) -> Result<Vec<Vector>> {
        (**self).embed(requests)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn max_batch(&self) -> usize {
        (**self).max_batch()
    }
    fn embed(&self, requests: &[EmbeddingRequest<'_>]) -> Result<Vec<Vector>> {
        (**self).embed(requests)
    }
}

impl fmt::Debug for dyn EmbeddingProvider + '_ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EmbeddingProvider(dim={})", self.dim())
    }
}

/// Embeds any number of requests, splitting into provider-sized calls.
/// Output order follows input order.
pub fn embed_batch(
    provider: &dyn EmbeddingProvider,
    requests: &[EmbeddingRequest<'_>],
) -> Result<Vec<Vector>> {
    if requests.is_empty() {
        return Err(Error::InvalidArgument("empty embedding request".into()));
    }
    let mut out = Vec::with_capacity(requests.len());
    for chunk in requests.chunks(provider.max_batch().max(1)) {
        let vs = provider.embed(chunk)?;
        if vs.len() != chunk.len() {
            return Err(Error::Protocol(format!(
                "provider returned {} vectors for {} requests",
                vs.len(),
                chunk.len()
            )));
        }
        for v in &vs {
            if v.len() != provider.dim() {
                return Err(Error::Protocol(format!(
                    "provider returned dim {} (expected {})",
                    v.len(),
                    provider.dim()
                )));
            }
        }
        out.extend(vs);
    }
    Ok(out)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic stand-in encoder.
///
/// The algorithm is pinned so fixtures reproduce across platforms:
///
/// 1. `h = FNV-1a-64(content)`; stream seed `s = h ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)`.
/// 2. Generator: `ChaCha8Rng::seed_from_u64(s)` (rand_chacha 0.3).
/// 3. Each coordinate is an Irwin-Hall normal approximation: the f64 sum of
///    twelve `rng.gen::<f64>()` draws minus 6.
/// 4. The f64 vector is scaled to unit L2 norm and cast to f32.
///
/// Only additions, multiplications, one division and one square root are
/// involved, all correctly rounded under IEEE 754.
pub fn synthetic_embed(content: &[u8], dim: usize, seed: u64) -> Vector {
    let s = fnv1a64(content) ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let mut raw = Vec::with_capacity(dim);
    let mut sq = 0.0f64;
    for _ in 0..dim {
        let mut acc = 0.0f64;
        for _ in 0..12 {
            acc += rng.gen::<f64>();
        }
        let x = acc - 6.0;
        sq += x * x;
        raw.push(x);
    }
    let n = sq.sqrt();
    if n == 0.0 {
        let mut v = vec![0.0f32; dim];
        if dim > 0 {
            v[0] = 1.0;
        }
        return v;
    }
    raw.into_iter().map(|x| (x / n) as f32).collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    dim: usize,
    seed: u64,
    max_batch: usize,
}

impl SyntheticProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            max_batch: default_max_batch(),
        }
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn embed(&self, requests: &[EmbeddingRequest<'_>]) -> Result<Vec<Vector>> {
        Ok(requests
            .iter()
            .map(|r| synthetic_embed(r.content, self.dim, self.seed))
            .collect())
    }
}

/// Provider whose items carry their own vectors as bracketed float text.
#[derive(Debug, Clone)]
pub struct LiteralProvider {
    dim: usize,
    max_batch: usize,
}

impl LiteralProvider {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            max_batch: default_max_batch(),
        }
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    /// Encodes a vector as the payload this provider understands.
    pub fn payload(v: &[f32]) -> Vec<u8> {
        serde_json::to_vec(v).expect("f32 slices serialize")
    }
}

impl EmbeddingProvider for LiteralProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn embed(&self, requests: &[EmbeddingRequest<'_>]) -> Result<Vec<Vector>> {
        requests
            .iter()
            .map(|r| {
                let text = std::str::from_utf8(r.content).map_err(|_| {
                    Error::InvalidArgument(format!("item {} is not utf-8", r.item_id))
                })?;
                let v = parse_literal(text).ok_or_else(|| {
                    Error::InvalidArgument(format!("item {} is not a literal vector", r.item_id))
                })?;
                super::check_vector(&v, self.dim)?;
                Ok(v)
            })
            .collect()
    }
}
