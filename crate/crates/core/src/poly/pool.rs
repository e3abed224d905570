//! Size-classed buffer pool for polynomial storage.

use std::collections::BTreeMap;
use std::sync::Mutex;

/// Allocation counters. `live` counts buffers handed out and not yet
/// returned, per class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub acquires: u64,
    pub releases: u64,
    pub reuses: u64,
    pub fresh_allocations: u64,
    /// Requests larger than the largest class, served by a plain allocation.
    pub fallbacks: u64,
    pub live: BTreeMap<usize, usize>,
    pub peak_live: BTreeMap<usize, usize>,
    /// Buffers currently parked in free lists, per class.
    pub free: BTreeMap<usize, usize>,
}

impl PoolStats {
    pub fn total_live(&self) -> usize {
        self.live.values().sum()
    }

    pub fn total_free(&self) -> usize {
        self.free.values().sum()
    }
}

struct Inner {
    free: BTreeMap<usize, Vec<Vec<i32>>>,
    stats: PoolStats,
}

/// Thread-safe pool of `i32` buffers for polynomials of ring degree `n`.
///
/// Requests are rounded up to the smallest class (a limb count) that fits.
pub struct BufferPool {
    n: usize,
    classes: Vec<usize>,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for BufferPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BufferPool").field("n", &self.n).field("classes", &self.classes).finish()
    }
}

impl BufferPool {
    /// Pool with explicit limb-count classes.
    pub fn new(n: usize, mut classes: Vec<usize>) -> Self {
        classes.sort_unstable();
        classes.dedup();
        classes.retain(|&c| c > 0);
        Self { n, classes, inner: Mutex::new(Inner { free: BTreeMap::new(), stats: PoolStats::default() }) }
    }

    /// Power-of-two classes up to `max_limbs`, plus `max_limbs` itself.
    pub fn with_max_limbs(n: usize, max_limbs: usize) -> Self {
        let mut classes = Vec::new();
        let mut c = 1;
        while c < max_limbs {
            classes.push(c);
            c *= 2;
        }
        classes.push(max_limbs.max(1));
        Self::new(n, classes)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Class serving a request for `limbs` rows, if any.
    pub fn class_for(&self, limbs: usize) -> Option<usize> {
        self.classes.iter().copied().find(|&c| c >= limbs)
    }

    /// Zero-filled buffer of exactly `limbs * n` elements.
    pub fn acquire(&self, limbs: usize) -> Vec<i32> {
        let len = limbs * self.n;
        let mut inner = self.inner.lock().expect("pool lock");
        inner.stats.acquires += 1;
        let Some(class) = self.class_for(limbs) else {
            inner.stats.fallbacks += 1;
            return vec![0; len];
        };
        let reused = inner.free.get_mut(&class).and_then(|list| list.pop());
        let live = inner.stats.live.entry(class).or_default();
        *live += 1;
        let live = *live;
        let peak = inner.stats.peak_live.entry(class).or_default();
        *peak = (*peak).max(live);
        let buf = match reused {
            Some(mut buf) => {
                inner.stats.reuses += 1;
                *inner.stats.free.entry(class).or_default() -= 1;
                drop(inner);
                buf.clear();
                buf.resize(len, 0);
                buf
            }
            None => {
                inner.stats.fresh_allocations += 1;
                drop(inner);
                let mut buf = Vec::with_capacity(class * self.n);
                buf.resize(len, 0);
                buf
            }
        };
        buf
    }

    /// Returns a buffer to the free list of its class. Buffers that do not
    /// match a class exactly (fallbacks, foreign vectors) are dropped.
    pub fn release(&self, buf: Vec<i32>) {
        if self.n == 0 || buf.capacity() % self.n != 0 {
            return;
        }
        let class = buf.capacity() / self.n;
        if !self.classes.contains(&class) {
            return;
        }
        let mut inner = self.inner.lock().expect("pool lock");
        let live = inner.stats.live.entry(class).or_default();
        if *live == 0 {
            // Not handed out by this pool.
            return;
        }
        *live -= 1;
        inner.stats.releases += 1;
        *inner.stats.free.entry(class).or_default() += 1;
        inner.free.entry(class).or_default().push(buf);
    }

    pub fn stats(&self) -> PoolStats {
        self.inner.lock().expect("pool lock").stats.clone()
    }

    /// Drops all parked buffers.
    pub fn trim(&self) {
        let mut inner = self.inner.lock().expect("pool lock");
        inner.free.clear();
        inner.stats.free.clear();
    }
}
