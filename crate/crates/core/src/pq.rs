//! Product quantization: per-subspace 256-entry codebooks, one byte per
//! subspace per node, and query-specific lookup tables for asymmetric
//! distance computation.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kmeans;
use crate::vectors::{l2_squared, Metric, Vector};

pub const CENTROIDS: usize = 256;
pub const PQ_MAGIC: &[u8; 4] = b"LPQ1";
/// magic + dim u32 + m_pq u32 + metric u8 + padded_dim u32 + n u64
pub const PQ_HEADER_LEN: usize = 4 + 4 + 4 + 1 + 4 + 8;

/// Subspace count targeting a ~100x byte ratio over f32 vectors.
pub fn default_subspaces(dim: usize) -> usize {
    ((dim as f64 / 25.6).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqModel {
    dim: usize,
    m_pq: usize,
    padded_dim: usize,
    metric: Metric,
    /// `m_pq × 256 × sub_dim`
    codebooks: Vec<f32>,
}

/// Codes for every node, `n × m_pq` bytes row-major.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PqCodes {
    m_pq: usize,
    codes: Vec<u8>,
}

/// Per-query table of partial distances, `m_pq × 256`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcTable {
    m_pq: usize,
    table: Vec<f32>,
}

impl PqModel {
    /// Trains one 256-centroid codebook per subspace. Vectors are zero-padded
    /// up to the next multiple of `m_pq`.
    pub fn train(
        sample: &[Vector],
        m_pq: usize,
        iters: usize,
        seed: u64,
        metric: Metric,
    ) -> Result<Self> {
        if m_pq == 0 {
            return Err(Error::InvalidArgument("m_pq must be >= 1".into()));
        }
        if sample.len() < CENTROIDS {
            return Err(Error::Build(format!(
                "PQ training needs at least {CENTROIDS} vectors, got {}; add data or lower m_pq/disable PQ",
                sample.len()
            )));
        }
        let dim = sample[0].len();
        if let Some(bad) = sample.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        let padded_dim = dim.div_ceil(m_pq) * m_pq;
        let sub = padded_dim / m_pq;
        let mut codebooks = Vec::with_capacity(m_pq * CENTROIDS * sub);
        let mut buf = Vec::with_capacity(sample.len() * sub);
        for s in 0..m_pq {
            buf.clear();
            for v in sample {
                for j in s * sub..(s + 1) * sub {
                    buf.push(v.get(j).copied().unwrap_or(0.0));
                }
            }
            let seed_s = seed ^ (s as u64).wrapping_mul(0xA24B_AED4_963E_E407);
            codebooks.extend(kmeans::train(&buf, sub, CENTROIDS, iters, seed_s));
        }
        Ok(Self {
            dim,
            m_pq,
            padded_dim,
            metric,
            codebooks,
        })
    }

    pub fn from_codebooks(dim: usize, m_pq: usize, metric: Metric, codebooks: Vec<f32>) -> Result<Self> {
        let padded_dim = dim.div_ceil(m_pq.max(1)) * m_pq.max(1);
        if m_pq == 0 || codebooks.len() != CENTROIDS * padded_dim {
            return Err(Error::InvalidArgument("codebook shape mismatch".into()));
        }
        if codebooks.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("codebook contains non-finite entries".into()));
        }
        Ok(Self {
            dim,
            m_pq,
            padded_dim,
            metric,
            codebooks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn subspaces(&self) -> usize {
        self.m_pq
    }
    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }
    pub fn sub_dim(&self) -> usize {
        self.padded_dim / self.m_pq
    }
    pub fn metric(&self) -> Metric {
        self.metric
    }
    pub fn codebooks(&self) -> &[f32] {
        &self.codebooks
    }

    pub fn centroid(&self, subspace: usize, c: usize) -> &[f32] {
        let sub = self.sub_dim();
        let start = (subspace * CENTROIDS + c) * sub;
        &self.codebooks[start..start + sub]
    }

    fn padded<'a>(&self, x: &'a [f32], buf: &'a mut Vec<f32>) -> Result<&'a [f32]> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if self.padded_dim == self.dim {
            return Ok(x);
        }
        buf.clear();
        buf.extend_from_slice(x);
        buf.resize(self.padded_dim, 0.0);
        Ok(buf.as_slice())
    }

    /// Nearest centroid per subspace under L2, ties to the lowest index.
    pub fn encode(&self, x: &[f32]) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let x = self.padded(x, &mut buf)?;
        let sub = self.sub_dim();
        let cb = CENTROIDS * sub;
        Ok((0..self.m_pq)
            .map(|s| {
                let (c, _) = kmeans::nearest(
                    &self.codebooks[s * cb..(s + 1) * cb],
                    sub,
                    &x[s * sub..(s + 1) * sub],
                );
                c as u8
            })
            .collect())
    }

    /// Reconstruction of a code, truncated back to `dim`.
    pub fn decode(&self, code: &[u8]) -> Vector {
        let mut out = Vec::with_capacity(self.padded_dim);
        for (s, &c) in code.iter().enumerate() {
            out.extend_from_slice(self.centroid(s, c as usize));
        }
        out.truncate(self.dim);
        out
    }

    /// Builds the per-query lookup table.
    pub fn adc(&self, q: &[f32]) -> Result<AdcTable> {
        let mut buf = Vec::new();
        let q = self.padded(q, &mut buf)?;
        let sub = self.sub_dim();
        let inv_norm = match self.metric {
            Metric::Cosine => {
                let n = crate::vectors::norm(q);
                if n > 0.0 {
                    1.0 / n
                } else {
                    0.0
                }
            }
            _ => 1.0,
        };
        let mut table = Vec::with_capacity(self.m_pq * CENTROIDS);
        for s in 0..self.m_pq {
            let qs = &q[s * sub..(s + 1) * sub];
            for c in 0..CENTROIDS {
                let cent = self.centroid(s, c);
                let v = match self.metric {
                    Metric::L2 => l2_squared(qs, cent),
                    Metric::InnerProduct => -crate::vectors::dot(qs, cent),
                    Metric::Cosine => -crate::vectors::dot(qs, cent) * inv_norm,
                };
                table.push(v);
            }
        }
        Ok(AdcTable {
            m_pq: self.m_pq,
            table,
        })
    }
}

impl AdcTable {
    /// Sum of one table entry per subspace.
    #[inline]
    pub fn distance(&self, code: &[u8]) -> f32 {
        let mut acc = 0.0f32;
        for (s, &c) in code.iter().enumerate() {
            acc += self.table[s * CENTROIDS + c as usize];
        }
        acc
    }

    pub fn subspaces(&self) -> usize {
        self.m_pq
    }

    pub fn entries(&self) -> &[f32] {
        &self.table
    }
}

impl PqCodes {
    pub fn new(m_pq: usize) -> Self {
        Self {
            m_pq,
            codes: Vec::new(),
        }
    }

    pub fn from_raw(m_pq: usize, codes: Vec<u8>) -> Result<Self> {
        if m_pq == 0 || !codes.len().is_multiple_of(m_pq) {
            return Err(Error::InvalidArgument("codes length not a multiple of m_pq".into()));
        }
        Ok(Self { m_pq, codes })
    }

    pub fn encode_all(model: &PqModel, vectors: &[Vector]) -> Result<Self> {
        let mut codes = Self::new(model.subspaces());
        for v in vectors {
            codes.push(&model.encode(v)?);
        }
        Ok(codes)
    }

    pub fn push(&mut self, code: &[u8]) {
        debug_assert_eq!(code.len(), self.m_pq);
        self.codes.extend_from_slice(code);
    }

    pub fn len(&self) -> usize {
        self.codes.len().checked_div(self.m_pq).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn subspaces(&self) -> usize {
        self.m_pq
    }

    #[inline]
    pub fn code(&self, id: u32) -> &[u8] {
        let i = id as usize * self.m_pq;
        &self.codes[i..i + self.m_pq]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.codes
    }

    pub fn byte_len(&self) -> usize {
        self.codes.len()
    }
}

/// Byte size of a persisted PQ file.
pub fn file_size(model: &PqModel, n: usize) -> usize {
    PQ_HEADER_LEN + model.codebooks.len() * 4 + n * model.m_pq
}

pub fn write_pq<W: Write>(mut w: W, model: &PqModel, codes: &PqCodes) -> Result<()> {
    if codes.subspaces() != model.m_pq {
        return Err(Error::InvalidArgument("codes and model disagree on m_pq".into()));
    }
    w.write_all(PQ_MAGIC)?;
    w.write_all(&(model.dim as u32).to_le_bytes())?;
    w.write_all(&(model.m_pq as u32).to_le_bytes())?;
    w.write_all(&[model.metric.tag()])?;
    w.write_all(&(model.padded_dim as u32).to_le_bytes())?;
    w.write_all(&(codes.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(model.codebooks.len() * 4);
    for x in &model.codebooks {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.write_all(codes.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_pq<R: Read>(mut r: R) -> Result<(PqModel, PqCodes)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < PQ_HEADER_LEN {
        return Err(Error::format("pq header", "file shorter than header"));
    }
    if &bytes[..4] != PQ_MAGIC {
        return Err(Error::format("pq header", "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let dim = u32_at(4);
    let m_pq = u32_at(8);
    let metric = Metric::from_tag(bytes[12])
        .ok_or_else(|| Error::format("pq header", format!("unknown metric tag {}", bytes[12])))?;
    let padded_dim = u32_at(13);
    let n = u64::from_le_bytes(bytes[17..25].try_into().unwrap()) as usize;
    if m_pq == 0 || padded_dim % m_pq != 0 || padded_dim < dim || padded_dim - dim >= m_pq {
        return Err(Error::format("pq header", "inconsistent dim / m_pq / padded dim"));
    }
    let cb_len = CENTROIDS * padded_dim;
    let need = PQ_HEADER_LEN + cb_len * 4 + n * m_pq;
    if bytes.len() < PQ_HEADER_LEN + cb_len * 4 {
        return Err(Error::format("pq codebooks", "truncated"));
    }
    if bytes.len() != need {
        return Err(Error::format(
            "pq codes",
            format!("expected {need} bytes total, found {}", bytes.len()),
        ));
    }
    let codebooks: Vec<f32> = bytes[PQ_HEADER_LEN..PQ_HEADER_LEN + cb_len * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if codebooks.iter().any(|x| !x.is_finite()) {
        return Err(Error::format("pq codebooks", "non-finite centroid"));
    }
    let codes = bytes[PQ_HEADER_LEN + cb_len * 4..].to_vec();
    Ok((
        PqModel {
            dim,
            m_pq,
            padded_dim,
            metric,
            codebooks,
        },
        PqCodes { m_pq, codes },
    ))
}

pub fn save_pq(path: &Path, model: &PqModel, codes: &PqCodes) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_pq(std::io::BufWriter::new(f), model, codes)
}

pub fn load_pq(path: &Path) -> Result<(PqModel, PqCodes)> {
    read_pq(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectors::synthetic_embed;

    fn synth(n: usize, dim: usize, seed: u64) -> Vec<Vector> {
        (0..n)
            .map(|i| synthetic_embed(format!("pq-{i}").as_bytes(), dim, seed))
            .collect()
    }

    fn mse(model: &PqModel, data: &[Vector]) -> f64 {
        data.iter()
            .map(|x| l2_squared(x, &model.decode(&model.encode(x).unwrap())) as f64)
            .sum::<f64>()
            / data.len() as f64
    }

    #[test]
    fn default_rule() {
        assert_eq!(default_subspaces(768), 30);
        assert_eq!(default_subspaces(256), 10);
        assert_eq!(default_subspaces(512), 20);
        assert_eq!(default_subspaces(10), 1);
        for dim in [256usize, 512, 768] {
            let ratio = 4.0 * dim as f64 / default_subspaces(dim) as f64;
            assert!((90.0..=110.0).contains(&ratio), "dim {dim}: {ratio}");
        }
    }

    #[test]
    fn one_hot_training_set_is_exact() {
        let sample: Vec<Vector> = (0..256)
            .map(|i| {
                let mut v = vec![0.0; 256];
                v[i] = 1.0;
                v
            })
            .collect();
        let model = PqModel::train(&sample, 1, 10, 0, Metric::L2).unwrap();
        assert!(mse(&model, &sample) < 1e-6);
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let sample = synth(300, 8, 1);
        let a = PqModel::train(&sample, 2, 0, 4, Metric::L2).unwrap();
        // every k-means++ seed is an input row
        for s in 0..2 {
            for c in 0..CENTROIDS {
                let cent = a.centroid(s, c);
                assert!(sample.iter().any(|v| &v[s * 4..s * 4 + 4] == cent));
            }
        }
        let b = PqModel::train(&sample, 2, 0, 4, Metric::L2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_samples() {
        let err = PqModel::train(&synth(10, 8, 0), 2, 3, 0, Metric::L2).unwrap_err();
        assert!(matches!(err, Error::Build(_)));
    }

    #[test]
    fn centroid_vector_encodes_to_its_index() {
        let model = PqModel::train(&synth(400, 8, 2), 4, 4, 9, Metric::L2).unwrap();
        let j = 17;
        let mut x = Vec::new();
        for s in 0..4 {
            x.extend_from_slice(model.centroid(s, j));
        }
        assert_eq!(model.encode(&x).unwrap(), vec![j as u8; 4]);
        // exact representation: approximate == exact distance
        let q = synthetic_embed(b"q", 8, 2);
        for metric in [Metric::L2, Metric::InnerProduct, Metric::Cosine] {
            let m = PqModel { metric, ..model.clone() };
            let t = m.adc(&q).unwrap();
            let approx = t.distance(&m.encode(&x).unwrap());
            let exact = metric.eval(&q, &x);
            if metric == Metric::Cosine {
                // ADC assumes unit-norm items
                let n = crate::vectors::norm(&x);
                assert!((approx / n - exact).abs() < 1e-6);
            } else {
                assert!((approx - exact).abs() < 1e-6, "{metric}: {approx} vs {exact}");
            }
        }
        let t = model.adc(&x).unwrap();
        assert!(t.distance(&model.encode(&x).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn error_shrinks_with_more_subspaces() {
        let data = synth(1000, 16, 3);
        let errs: Vec<f64> = [2usize, 4, 8]
            .iter()
            .map(|&m| mse(&PqModel::train(&data, m, 8, 1, Metric::L2).unwrap(), &data))
            .collect();
        assert!(errs[0] >= errs[1] && errs[1] >= errs[2], "{errs:?}");
        assert!(errs.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn padding_applied() {
        let data = synth(300, 10, 4);
        let model = PqModel::train(&data, 3, 2, 0, Metric::L2).unwrap();
        assert_eq!(model.padded_dim(), 12);
        assert_eq!(model.decode(&model.encode(&data[0]).unwrap()).len(), 10);
    }

    #[test]
    fn adc_is_deterministic_and_dim_checked() {
        let model = PqModel::train(&synth(300, 8, 5), 2, 2, 0, Metric::Cosine).unwrap();
        let q = synthetic_embed(b"q", 8, 0);
        assert_eq!(model.adc(&q).unwrap(), model.adc(&q.clone()).unwrap());
        assert!(model.adc(&[1.0]).is_err());
        assert!(model.encode(&[1.0]).is_err());
    }

    #[test]
    fn file_round_trip_and_size() {
        let data = synth(300, 12, 6);
        let model = PqModel::train(&data, 4, 2, 0, Metric::InnerProduct).unwrap();
        let codes = PqCodes::encode_all(&model, &data).unwrap();
        let mut buf = Vec::new();
        write_pq(&mut buf, &model, &codes).unwrap();
        assert_eq!(buf.len(), file_size(&model, 300));
        assert_eq!(buf.len(), PQ_HEADER_LEN + model.codebooks().len() * 4 + 300 * 4);
        let (m2, c2) = read_pq(buf.as_slice()).unwrap();
        assert_eq!(m2, model);
        assert_eq!(c2, codes);
        assert!(matches!(
            read_pq(&buf[..buf.len() - 1]),
            Err(Error::Format { section: "pq codes", .. })
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_pq(bad.as_slice()), Err(Error::Format { section: "pq header", .. })));
        assert!(read_pq(&buf[..10]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn encode_decode_idempotent(seed in 0u64..1000) {
                let model = PqModel::train(&synth(256, 8, 11), 4, 3, 0, Metric::L2).unwrap();
                let x = synthetic_embed(format!("p{seed}").as_bytes(), 8, seed);
                let c = model.encode(&x).unwrap();
                prop_assert_eq!(model.encode(&model.decode(&c)).unwrap(), c);
            }
        }
    }
}
