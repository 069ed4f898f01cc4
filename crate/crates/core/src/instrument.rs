use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Counts exact embeddings currently held in memory and the high-water mark.
/// Clones share the same counters.
#[derive(Debug, Clone, Default)]
pub struct ResidentTracker {
    inner: Arc<Counters>,
}

#[derive(Debug, Default)]
struct Counters {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl ResidentTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn acquire(&self, n: usize) {
        let now = self.inner.current.fetch_add(n, Ordering::SeqCst) + n;
        self.inner.peak.fetch_max(now, Ordering::SeqCst);
    }

    pub fn release(&self, n: usize) {
        self.inner.current.fetch_sub(n, Ordering::SeqCst);
    }

    pub fn current(&self) -> usize {
        self.inner.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.inner.peak.load(Ordering::SeqCst)
    }
}

/// RAII handle releasing its count on drop.
#[derive(Debug)]
pub struct Resident {
    tracker: ResidentTracker,
    n: usize,
}

impl Resident {
    pub fn hold(tracker: &ResidentTracker, n: usize) -> Self {
        tracker.acquire(n);
        Self {
            tracker: tracker.clone(),
            n,
        }
    }
}

impl Drop for Resident {
    fn drop(&mut self) {
        self.tracker.release(self.n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tracks_high_water() {
        let t = ResidentTracker::new();
        {
            let _a = Resident::hold(&t, 10);
            let _b = Resident::hold(&t, 5);
            assert_eq!(t.current(), 15);
        }
        let _c = Resident::hold(&t, 3);
        assert_eq!(t.current(), 3);
        assert_eq!(t.peak(), 15);
    }
}
