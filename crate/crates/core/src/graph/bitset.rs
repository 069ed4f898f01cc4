/// Soft-delete flags, one bit per node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeleteSet {
    words: Vec<u64>,
    len: usize,
    count: usize,
}

impl DeleteSet {
    pub fn with_len(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
            count: 0,
        }
    }

    pub(crate) fn from_words(words: Vec<u64>, len: usize) -> Option<Self> {
        if words.len() != len.div_ceil(64) {
            return None;
        }
        // bits past `len` must be clear
        if !len.is_multiple_of(64) {
            if let Some(&last) = words.last() {
                if last >> (len % 64) != 0 {
                    return None;
                }
            }
        }
        let count = words.iter().map(|w| w.count_ones() as usize).sum();
        Some(Self { words, len, count })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of set flags.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn push(&mut self, flag: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        self.len += 1;
        if flag {
            self.insert(self.len as u32 - 1);
        }
    }

    /// Removes the last flag and returns it.
    pub fn pop(&mut self) -> Option<bool> {
        if self.len == 0 {
            return None;
        }
        let last = self.len as u32 - 1;
        let flag = self.contains(last);
        if flag {
            self.words[last as usize / 64] &= !(1u64 << (last % 64));
            self.count -= 1;
        }
        self.len -= 1;
        if self.len.is_multiple_of(64) {
            self.words.pop();
        }
        Some(flag)
    }

    #[inline]
    pub fn contains(&self, id: u32) -> bool {
        let i = id as usize;
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    /// Sets the flag; returns true if it was previously clear.
    pub fn insert(&mut self, id: u32) -> bool {
        let i = id as usize;
        assert!(i < self.len, "delete flag {i} out of range");
        let mask = 1u64 << (i % 64);
        let w = &mut self.words[i / 64];
        if *w & mask == 0 {
            *w |= mask;
            self.count += 1;
            true
        } else {
            false
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.len as u32).filter(move |&i| self.contains(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_insert_count() {
        let mut s = DeleteSet::default();
        for i in 0..130 {
            s.push(i % 3 == 0);
        }
        assert_eq!(s.len(), 130);
        assert_eq!(s.count(), 44);
        assert!(s.contains(129));
        assert!(!s.contains(128));
        assert!(s.insert(128));
        assert!(!s.insert(128));
        assert_eq!(s.count(), 45);
        assert!(!s.contains(500));
        let r = DeleteSet::from_words(s.words().to_vec(), 130).unwrap();
        assert_eq!(r, s);
        assert!(DeleteSet::from_words(vec![u64::MAX], 3).is_none());
    }
}
