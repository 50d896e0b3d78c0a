use rand::seq::SliceRandom;

use crate::init::Rng;

const EPOCH_STREAM_BASE: u64 = 1 << 40;

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, rng: &Rng, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng.stream(EPOCH_STREAM_BASE + epoch));
    order
}

/// Endless stream of index batches. Each epoch is a fresh seeded
/// permutation; its last batch may be short.
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    size: usize,
    rng: Rng,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
}

impl BatchStream {
    pub fn new(n: usize, size: usize, rng: Rng) -> Self {
        assert!(n > 0 && size > 0, "batching needs items and a positive size");
        Self {
            n,
            size,
            rng,
            epoch: 0,
            pos: 0,
            order: epoch_order(n, &rng, 0),
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.size)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Position `(epoch, offset)`, enough to resume the stream.
    pub fn cursor(&self) -> (u64, usize) {
        (self.epoch, self.pos)
    }

    pub fn seek(&mut self, epoch: u64, pos: usize) {
        self.epoch = epoch;
        self.pos = pos;
        self.order = epoch_order(self.n, &self.rng, epoch);
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.n {
            self.seek(self.epoch + 1, 0);
        }
        let end = (self.pos + self.size).min(self.n);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}
