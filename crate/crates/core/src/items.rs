//! Raw item payloads. Row `i` is the content of node `i`.
//!
//! `items.dat` holds the concatenated payloads; `items.idx` holds `n + 1`
//! little-endian u64 offsets into it.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemStore {
    data: Vec<u8>,
    offsets: Vec<u64>,
}

impl Default for ItemStore {
    fn default() -> Self {
        Self {
            data: Vec::new(),
            offsets: vec![0],
        }
    }
}

impl ItemStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items<I, T>(items: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        let mut s = Self::new();
        for it in items {
            s.push(it.as_ref());
        }
        s
    }

    pub fn push(&mut self, content: &[u8]) -> u32 {
        self.data.extend_from_slice(content);
        self.offsets.push(self.data.len() as u64);
        (self.offsets.len() - 2) as u32
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, id: u32) -> Option<&[u8]> {
        let i = id as usize;
        if i + 1 >= self.offsets.len() {
            return None;
        }
        Some(&self.data[self.offsets[i] as usize..self.offsets[i + 1] as usize])
    }

    pub fn byte_size(&self) -> usize {
        self.data.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.offsets
            .windows(2)
            .map(|w| &self.data[w[0] as usize..w[1] as usize])
    }

    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.offsets.truncate(n + 1);
            self.data.truncate(self.offsets[n] as usize);
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("items.dat"), &self.data)?;
        let mut idx = Vec::with_capacity(self.offsets.len() * 8);
        for o in &self.offsets {
            idx.extend_from_slice(&o.to_le_bytes());
        }
        let mut f = std::fs::File::create(dir.join("items.idx"))?;
        f.write_all(&idx)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let data = std::fs::read(dir.join("items.dat"))?;
        let idx = std::fs::read(dir.join("items.idx"))?;
        if idx.len() % 8 != 0 || idx.len() < 8 {
            return Err(Error::format("items index", "length is not a positive multiple of 8"));
        }
        let offsets: Vec<u64> = idx
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::format("items index", "offsets not monotone from zero"));
        }
        if *offsets.last().unwrap() as usize != data.len() {
            return Err(Error::format("items data", "size does not match index"));
        }
        Ok(Self { data, offsets })
    }
}

/// Splits one source into item payloads.
pub trait Chunker {
    fn split<'a>(&self, data: &'a [u8]) -> Vec<&'a [u8]>;
}

/// Fixed byte windows advancing by `size - overlap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteWindow {
    pub size: usize,
    pub overlap: usize,
}

impl Default for ByteWindow {
    fn default() -> Self {
        Self {
            size: 1024,
            overlap: 128,
        }
    }
}

impl ByteWindow {
    pub fn new(size: usize, overlap: usize) -> Result<Self> {
        if size == 0 || overlap >= size {
            return Err(Error::InvalidArgument(format!(
                "chunk overlap ({overlap}) must be smaller than the chunk size ({size})"
            )));
        }
        Ok(Self { size, overlap })
    }
}

impl Chunker for ByteWindow {
    fn split<'a>(&self, data: &'a [u8]) -> Vec<&'a [u8]> {
        if data.len() <= self.size {
            return vec![data];
        }
        let step = self.size - self.overlap;
        let mut out = Vec::new();
        let mut start = 0;
        loop {
            let end = (start + self.size).min(data.len());
            out.push(&data[start..end]);
            if end == data.len() {
                return out;
            }
            start += step;
        }
    }
}

/// Outcome of [`ingest_path`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub items: ItemStore,
    pub sources: usize,
    pub warnings: Vec<String>,
}

/// Reads a directory of text files (sorted by name, each file chunked) or a
/// records file (one item per non-empty line, long lines chunked).
/// Unreadable files become warnings; zero items is an error.
pub fn ingest_path(path: &Path, chunker: &dyn Chunker) -> Result<Ingested> {
    let mut out = Ingested {
        items: ItemStore::new(),
        sources: 0,
        warnings: Vec::new(),
    };
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            match std::fs::read(&f) {
                Ok(data) => {
                    out.sources += 1;
                    if data.iter().all(u8::is_ascii_whitespace) {
                        out.warnings.push(format!("{}: empty, skipped", f.display()));
                        continue;
                    }
                    for c in chunker.split(&data) {
                        out.items.push(c);
                    }
                }
                Err(e) => out.warnings.push(format!("{}: {e}", f.display())),
            }
        }
    } else {
        let data = std::fs::read(path)?;
        out.sources = 1;
        for line in data.split(|&b| b == b'\n') {
            let line = line.strip_suffix(b"\r").unwrap_or(line);
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            for c in chunker.split(line) {
                out.items.push(c);
            }
        }
    }
    if out.items.is_empty() {
        return Err(Error::InvalidArgument(format!("no items found in {}", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_get_round_trip() {
        let s = ItemStore::from_items(["a", "", "ccc"]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.get(0), Some(&b"a"[..]));
        assert_eq!(s.get(1), Some(&b""[..]));
        assert_eq!(s.get(2), Some(&b"ccc"[..]));
        assert_eq!(s.get(3), None);
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        assert_eq!(ItemStore::load(dir.path()).unwrap(), s);
        std::fs::write(dir.path().join("items.dat"), b"ab").unwrap();
        assert!(ItemStore::load(dir.path()).is_err());
    }

    #[test]
    fn truncate() {
        let mut s = ItemStore::from_items(["a", "bb", "ccc"]);
        s.truncate(1);
        assert_eq!(s, ItemStore::from_items(["a"]));
    }

    #[test]
    fn byte_windows_overlap() {
        let w = ByteWindow::new(4, 1).unwrap();
        let data = b"abcdefghij";
        assert_eq!(w.split(data), vec![&b"abcd"[..], b"defg", b"ghij"]);
        assert_eq!(w.split(b"abc"), vec![&b"abc"[..]]);
        assert_eq!(ByteWindow::new(4, 1).unwrap().split(b"abcdefg"), vec![&b"abcd"[..], b"defg"]);
        assert!(ByteWindow::new(4, 4).is_err());
    }

    #[test]
    fn records_file_and_directory() {
        let dir = tempfile::tempdir().unwrap();
        let rec = dir.path().join("records.txt");
        std::fs::write(&rec, "first\nsecond\r\n\nthird\n").unwrap();
        let got = ingest_path(&rec, &ByteWindow::default()).unwrap();
        assert_eq!(got.items, ItemStore::from_items(["first", "second", "third"]));
        assert_eq!(ingest_path(&rec, &ByteWindow::default()).unwrap(), got);

        let docs = dir.path().join("docs");
        std::fs::create_dir(&docs).unwrap();
        std::fs::write(docs.join("b.txt"), "0123456789").unwrap();
        std::fs::write(docs.join("a.txt"), "xy").unwrap();
        std::fs::write(docs.join("c.txt"), "  \n").unwrap();
        let got = ingest_path(&docs, &ByteWindow::new(6, 2).unwrap()).unwrap();
        assert_eq!(got.items, ItemStore::from_items(["xy", "012345", "456789"]));
        assert_eq!(got.warnings.len(), 1);

        let empty = dir.path().join("empty.txt");
        std::fs::write(&empty, "\n\n").unwrap();
        assert!(ingest_path(&empty, &ByteWindow::default()).is_err());
    }
}
