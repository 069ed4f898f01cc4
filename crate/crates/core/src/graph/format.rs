//! Binary layout (all integers little-endian):
//!
//! ```text
//! graph.bin
//!   magic "LGR1" | version u16 | n u64 | M u16 | level_count u16
//!   entry u32 (u32::MAX when n == 0) | levels: n × u8
//!   per level l in 0..level_count:
//!     member_count u64
//!     member ids: member_count × u32        (only for l > 0; level 0 is dense)
//!     offsets: (member_count + 1) × u64
//!     neighbors: offsets[member_count] × u32
//!
//! deleted.bin
//!   magic "LDL1" | len u64 | ceil(len / 64) × u64 words
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{CsrLayer, DeleteSet, PrunedGraph};
use crate::error::{Error, Result};

pub const GRAPH_MAGIC: &[u8; 4] = b"LGR1";
pub const DELETED_MAGIC: &[u8; 4] = b"LDL1";
pub const GRAPH_VERSION: u16 = 1;

pub fn write_graph<W: Write>(mut w: W, g: &PrunedGraph) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + g.len() * 40);
    buf.extend_from_slice(GRAPH_MAGIC);
    buf.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.len() as u64).to_le_bytes());
    let m = u16::try_from(g.max_degree)
        .map_err(|_| Error::InvalidArgument("max degree exceeds u16".into()))?;
    buf.extend_from_slice(&m.to_le_bytes());
    buf.extend_from_slice(&(g.layers.len() as u16).to_le_bytes());
    buf.extend_from_slice(&g.entry.unwrap_or(u32::MAX).to_le_bytes());
    buf.extend_from_slice(&g.levels);
    for (l, layer) in g.layers.iter().enumerate() {
        buf.extend_from_slice(&(layer.member_count() as u64).to_le_bytes());
        if l > 0 {
            for &id in layer.nodes.as_deref().unwrap_or(&[]) {
                buf.extend_from_slice(&id.to_le_bytes());
            }
        }
        for &o in &layer.offsets {
            buf.extend_from_slice(&o.to_le_bytes());
        }
        for &v in &layer.neighbors {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                section,
                format!("truncated: need {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, s: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, s)?.try_into().unwrap()))
    }
    fn u32(&mut self, s: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, s)?.try_into().unwrap()))
    }
    fn u64(&mut self, s: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, s)?.try_into().unwrap()))
    }
    fn u32s(&mut self, n: usize, s: &'static str) -> Result<Vec<u32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(s, "length overflow"))?, s)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn u64s(&mut self, n: usize, s: &'static str) -> Result<Vec<u64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(s, "length overflow"))?, s)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn checked_len(v: u64, limit: usize, section: &'static str) -> Result<usize> {
    let v = usize::try_from(v).map_err(|_| Error::format(section, "length overflow"))?;
    if v > limit {
        return Err(Error::format(section, format!("length {v} exceeds file size")));
    }
    Ok(v)
}

/// Parses `graph.bin`. The returned graph has no deleted nodes; pair with
/// [`read_deleted`].
pub fn read_graph<R: Read>(mut r: R) -> Result<PrunedGraph> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "graph header")? != GRAPH_MAGIC {
        return Err(Error::format("graph header", "bad magic"));
    }
    let version = c.u16("graph header")?;
    if version != GRAPH_VERSION {
        return Err(Error::format("graph header", format!("unsupported version {version}")));
    }
    let n = checked_len(c.u64("graph header")?, bytes.len(), "graph header")?;
    let max_degree = c.u16("graph header")? as usize;
    let level_count = c.u16("graph header")? as usize;
    let entry = c.u32("graph header")?;
    let levels = c.take(n, "graph levels")?.to_vec();
    let entry = if n == 0 {
        None
    } else if (entry as usize) < n {
        Some(entry)
    } else {
        return Err(Error::format("graph header", format!("entry point {entry} out of range")));
    };
    let mut layers = Vec::with_capacity(level_count);
    for l in 0..level_count {
        let count = checked_len(c.u64("graph layer header")?, bytes.len(), "graph layer header")?;
        let nodes = if l == 0 {
            if count != n {
                return Err(Error::format("graph layer header", "base layer must cover all nodes"));
            }
            None
        } else {
            Some(c.u32s(count, "graph layer nodes")?)
        };
        let offsets = c.u64s(count + 1, "graph layer offsets")?;
        let total = checked_len(*offsets.last().unwrap(), bytes.len(), "graph layer offsets")?;
        let neighbors = c.u32s(total, "graph layer neighbors")?;
        layers.push(CsrLayer {
            nodes,
            offsets,
            neighbors,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::format("graph trailer", format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let g = PrunedGraph {
        max_degree,
        levels,
        entry,
        layers,
        deleted: DeleteSet::with_len(n),
    };
    g.validate()?;
    Ok(g)
}

pub fn write_deleted<W: Write>(mut w: W, d: &DeleteSet) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + d.words().len() * 8);
    buf.extend_from_slice(DELETED_MAGIC);
    buf.extend_from_slice(&(d.len() as u64).to_le_bytes());
    for w in d.words() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_deleted<R: Read>(mut r: R) -> Result<DeleteSet> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "deleted bitset")? != DELETED_MAGIC {
        return Err(Error::format("deleted bitset", "bad magic"));
    }
    let len = checked_len(c.u64("deleted bitset")?, bytes.len() * 8, "deleted bitset")?;
    let words = c.u64s(len.div_ceil(64), "deleted bitset")?;
    if c.pos != bytes.len() {
        return Err(Error::format("deleted bitset", "trailing bytes"));
    }
    DeleteSet::from_words(words, len).ok_or_else(|| Error::format("deleted bitset", "bits set past length"))
}

/// Writes `graph.bin` and `deleted.bin` into `dir`.
pub fn save(g: &PrunedGraph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_graph(std::io::BufWriter::new(std::fs::File::create(dir.join("graph.bin"))?), g)?;
    write_deleted(
        std::io::BufWriter::new(std::fs::File::create(dir.join("deleted.bin"))?),
        &g.deleted,
    )?;
    Ok(())
}

/// Loads `graph.bin` (and `deleted.bin` when present) from `dir`.
pub fn load(dir: &Path) -> Result<PrunedGraph> {
    let mut g = read_graph(std::io::BufReader::new(std::fs::File::open(dir.join("graph.bin"))?))?;
    let dpath = dir.join("deleted.bin");
    if dpath.exists() {
        let d = read_deleted(std::io::BufReader::new(std::fs::File::open(dpath)?))?;
        g.replace_deleted(d)?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencyGraph;

    fn sample() -> PrunedGraph {
        let mut a = AdjacencyGraph::new(3);
        for lv in [0, 2, 1, 0] {
            a.push_node(lv);
        }
        a.set_neighbors(0, 0, vec![1, 3]);
        a.set_neighbors(1, 0, vec![0, 2]);
        a.set_neighbors(2, 0, vec![1]);
        a.set_neighbors(3, 0, vec![0]);
        a.set_neighbors(1, 1, vec![2]);
        a.set_neighbors(2, 1, vec![1]);
        a.freeze()
    }

    #[test]
    fn round_trip() {
        let mut g = sample();
        g.mark_deleted(2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&g, dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), g);
    }

    #[test]
    fn cycle_round_trip() {
        let g = PrunedGraph::from_lists(4, &[vec![1], vec![2], vec![0]]).unwrap();
        let mut buf = Vec::new();
        write_graph(&mut buf, &g).unwrap();
        assert_eq!(read_graph(buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn empty_round_trip() {
        let g = PrunedGraph::empty(8);
        let mut buf = Vec::new();
        write_graph(&mut buf, &g).unwrap();
        assert_eq!(read_graph(buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let mut buf = Vec::new();
        write_graph(&mut buf, &sample()).unwrap();
        for cut in 0..buf.len() {
            match read_graph(&buf[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_header_sections_named() {
        let mut buf = Vec::new();
        write_graph(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'Z';
        assert!(matches!(read_graph(bad.as_slice()), Err(Error::Format { section: "graph header", .. })));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_graph(bad.as_slice()), Err(Error::Format { section: "graph header", .. })));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_graph(extra.as_slice()), Err(Error::Format { section: "graph trailer", .. })));
    }

    #[test]
    fn deleted_round_trip_and_truncation() {
        let mut d = DeleteSet::with_len(70);
        d.insert(69);
        d.insert(3);
        let mut buf = Vec::new();
        write_deleted(&mut buf, &d).unwrap();
        assert_eq!(read_deleted(buf.as_slice()).unwrap(), d);
        assert!(matches!(
            read_deleted(&buf[..buf.len() - 3]),
            Err(Error::Format { section: "deleted bitset", .. })
        ));
    }
}
