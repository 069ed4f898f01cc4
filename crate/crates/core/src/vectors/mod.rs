//! Vector primitives, distance functions and the embedding-provider boundary.
//!
//! Every metric is exposed as a distance where smaller is better: squared L2
//! is returned as-is, inner product and cosine are negated similarities.

mod external;
mod provider;

pub use external::{serve_connection, ExternalProvider};
pub use provider::{
    embed_batch, synthetic_embed, EmbeddingProvider, EmbeddingRequest, LiteralProvider,
    ProviderConfig, ProviderKind, SyntheticProvider,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense embedding.
pub type Vector = Vec<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2,
    InnerProduct,
    #[default]
    Cosine,
}

impl Metric {
    pub fn tag(self) -> u8 {
        match self {
            Metric::L2 => 0,
            Metric::InnerProduct => 1,
            Metric::Cosine => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Metric> {
        match tag {
            0 => Some(Metric::L2),
            1 => Some(Metric::InnerProduct),
            2 => Some(Metric::Cosine),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::InnerProduct => "inner_product",
            Metric::Cosine => "cosine",
        }
    }

    /// Distance without the dimension check. Callers guarantee equal lengths.
    #[inline]
    pub fn eval(self, a: &[f32], b: &[f32]) -> f32 {
        match self {
            Metric::L2 => l2_squared(a, b),
            Metric::InnerProduct => -dot(a, b),
            Metric::Cosine => {
                let (d, na, nb) = dot_and_norms(a, b);
                let denom = (na * nb).sqrt();
                if denom == 0.0 {
                    0.0
                } else {
                    -((d / denom) as f32)
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Metric::L2),
            "ip" | "inner_product" | "dot" => Ok(Metric::InnerProduct),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Distance between two vectors under `metric`, smaller is better.
pub fn distance(a: &[f32], b: &[f32], metric: Metric) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(metric.eval(a, b))
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn l2_squared(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[inline]
fn dot_and_norms(a: &[f32], b: &[f32]) -> (f64, f64, f64) {
    let (mut d, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    (d, na, nb)
}

pub fn norm(a: &[f32]) -> f32 {
    a.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt() as f32
}

/// Scales `a` to unit L2 norm in place. Zero vectors are left untouched.
pub fn normalize(a: &mut [f32]) {
    let n = a.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in a.iter_mut() {
            *x = (*x as f64 / n) as f32;
        }
    }
}

/// Checks the index-wide invariants on a vector: expected length and finite entries.
pub fn check_vector(v: &[f32], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite entry at coordinate {pos}"
        )));
    }
    Ok(())
}

/// Parses a literal vector in bracketed float syntax, e.g. `[0.5, -1, 2e-3]`.
pub fn parse_literal(text: &str) -> Option<Vector> {
    let t = text.trim();
    if !(t.starts_with('[') && t.ends_with(']')) {
        return None;
    }
    serde_json::from_str::<Vec<f32>>(t).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_is_squared() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0], Metric::L2).unwrap(), 25.0);
    }

    #[test]
    fn cosine_identical_is_minus_one() {
        let a = [1.0, 2.0, 3.0];
        let d = distance(&a, &a, Metric::Cosine).unwrap();
        assert!((d + 1.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn inner_product_negated() {
        let d = distance(&[1.0, 0.0], &[0.6, 0.8], Metric::InnerProduct).unwrap();
        assert!((d + 0.6).abs() < 1e-7);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = distance(&[1.0], &[1.0, 2.0], Metric::L2).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn literal_parsing() {
        assert_eq!(parse_literal(" [1, 2.5,-3] "), Some(vec![1.0, 2.5, -3.0]));
        assert_eq!(parse_literal("hello"), None);
        assert_eq!(parse_literal("[1, x]"), None);
    }

    #[test]
    fn check_vector_rejects_nan() {
        assert!(check_vector(&[1.0, f32::NAN], 2).is_err());
        assert!(check_vector(&[1.0], 2).is_err());
        assert!(check_vector(&[1.0, 0.0], 2).is_ok());
    }

    #[test]
    fn metric_tags_roundtrip() {
        for m in [Metric::L2, Metric::InnerProduct, Metric::Cosine] {
            assert_eq!(Metric::from_tag(m.tag()), Some(m));
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn vec_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
            (1usize..24).prop_flat_map(|d| {
                (
                    prop::collection::vec(-10.0f32..10.0, d),
                    prop::collection::vec(-10.0f32..10.0, d),
                )
            })
        }

        proptest! {
            #[test]
            fn symmetric((a, b) in vec_pair()) {
                for m in [Metric::L2, Metric::Cosine, Metric::InnerProduct] {
                    prop_assert_eq!(m.eval(&a, &b).to_bits(), m.eval(&b, &a).to_bits());
                }
            }

            #[test]
            fn unit_vector_orderings_agree(
                q in prop::collection::vec(-1.0f32..1.0, 8),
                pts in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 8), 2..20),
            ) {
                let mut q = q;
                normalize(&mut q);
                prop_assume!(norm(&q) > 0.5);
                let pts: Vec<Vec<f32>> = pts.into_iter().map(|mut p| { normalize(&mut p); p })
                    .filter(|p| norm(p) > 0.5).collect();
                let mut ip: Vec<(f32, usize)> = pts.iter().enumerate()
                    .map(|(i, p)| (Metric::InnerProduct.eval(&q, p), i)).collect();
                let mut cos: Vec<(f32, usize)> = pts.iter().enumerate()
                    .map(|(i, p)| (Metric::Cosine.eval(&q, p), i)).collect();
                // near-ties within float noise can legitimately reorder
                let gaps_ok = {
                    let mut s: Vec<f32> = ip.iter().map(|x| x.0).collect();
                    s.sort_by(|a, b| a.total_cmp(b));
                    s.windows(2).all(|w| w[1] - w[0] > 1e-5)
                };
                prop_assume!(gaps_ok);
                ip.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cos.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let a: Vec<usize> = ip.iter().map(|x| x.1).collect();
                let b: Vec<usize> = cos.iter().map(|x| x.1).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
