use serde::Serialize;

/// Latency summary in nanoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub median_ns: u64,
    pub min_ns: u64,
    pub p99_ns: u64,
    pub samples: usize,
}

impl Stats {
    /// `None` for an empty sample set. The median of an even count is the
    /// lower middle value; p99 uses the nearest rank.
    pub fn from_samples(mut samples: Vec<u64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_unstable();
        let n = samples.len();
        let rank = (n * 99).div_ceil(100).max(1);
        Some(Stats {
            median_ns: samples[(n - 1) / 2],
            min_ns: samples[0],
            p99_ns: samples[rank - 1],
            samples: n,
        })
    }
}
