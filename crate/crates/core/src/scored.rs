use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// A node paired with its distance to some target. Ordered by
/// `(distance, id)` so every tie is broken by the lower id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub dist: f32,
    pub id: u32,
}

impl Scored {
    #[inline]
    pub fn new(dist: f32, id: u32) -> Self {
        Self { dist, id }
    }
}

impl Eq for Scored {}

impl Ord for Scored {
    #[inline]
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Scored {
    #[inline]
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-query visited marks backed by an epoch counter, so clearing is O(1).
#[derive(Debug, Clone, Default)]
pub(crate) struct VisitedSet {
    marks: Vec<u32>,
    epoch: u32,
}

impl VisitedSet {
    pub fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 1,
        }
    }

    pub fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Marks `id`; returns true if it was not yet marked.
    #[inline]
    pub fn insert(&mut self, id: u32) -> bool {
        let i = id as usize;
        if i >= self.marks.len() {
            self.marks.resize(i + 1, 0);
        }
        if self.marks[i] == self.epoch {
            false
        } else {
            self.marks[i] = self.epoch;
            true
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_broken_by_id() {
        let mut v = [Scored::new(1.0, 5), Scored::new(1.0, 2), Scored::new(0.5, 9)];
        v.sort();
        assert_eq!(v.iter().map(|s| s.id).collect::<Vec<_>>(), vec![9, 2, 5]);
    }

    #[test]
    fn visited_epochs() {
        let mut v = VisitedSet::new(4);
        assert!(v.insert(2));
        assert!(!v.insert(2));
        v.reset(4);
        assert!(v.insert(2));
        assert!(v.insert(7));
    }
}
