use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BandwidthTrace, TraceError};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// A pool of traces with a reproducible train/test partition.
#[derive(Debug, Clone)]
pub struct TraceSet {
    pub traces: Vec<BandwidthTrace>,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl TraceSet {
    pub fn new(traces: Vec<BandwidthTrace>, split_seed: u64) -> Self {
        Self {
            traces,
            split_seed,
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }

    /// Partitions into `⌊fraction·n⌋` training traces and the rest.
    ///
    /// The result depends only on the trace ids, the seed and the fraction:
    /// traces are ordered by id before shuffling, so input order is irrelevant.
    pub fn split(&self) -> Result<(Vec<BandwidthTrace>, Vec<BandwidthTrace>), TraceError> {
        let n = self.traces.len();
        if n < 2 {
            return Err(TraceError::TooFewTraces(n));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(TraceError::InvalidFraction(self.train_fraction));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.traces[a].id().cmp(self.traces[b].id()).then(a.cmp(&b)));
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.split_seed));
        // guard against 0.8 * 5 landing a hair under 4
        let n_train = (self.train_fraction * n as f64 + 1e-9).floor() as usize;
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.traces[i].clone()).collect();
        Ok((pick(&order[..n_train]), pick(&order[n_train..])))
    }
}
