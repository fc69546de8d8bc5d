//! Seeded joint batch iteration over the two domains.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::UnpairedDataset;
use crate::error::{Error, Result};

/// Indices of one joint batch, one entry per domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndices {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

/// Independent per-domain shuffles each epoch; the joint epoch ends with
/// the smaller domain (no wraparound), and incomplete tail batches are
/// dropped. Fully determined by `(seed, epoch)`.
pub struct BatchIterator {
    len_a: usize,
    len_b: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order_a: Vec<usize>,
    order_b: Vec<usize>,
    cursor: usize,
    batches_per_epoch: usize,
}

impl BatchIterator {
    pub fn new(ds: &UnpairedDataset, batch: usize, seed: u64) -> Result<BatchIterator> {
        let (len_a, len_b) = (ds.a.train.len(), ds.b.train.len());
        if batch == 0 {
            return Err(Error::Config("batch size must be >= 1".to_string()));
        }
        if batch > len_a || batch > len_b {
            return Err(Error::Config(format!(
                "batch size {batch} exceeds a training domain ({len_a} / {len_b} images)"
            )));
        }
        let mut it = BatchIterator {
            len_a,
            len_b,
            batch,
            seed,
            epoch: 0,
            order_a: Vec::new(),
            order_b: Vec::new(),
            cursor: 0,
            batches_per_epoch: (len_a / batch).min(len_b / batch),
        };
        it.reshuffle();
        Ok(it)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    fn reshuffle(&mut self) {
        let mix = self
            .seed
            .wrapping_add(self.epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng_a = ChaCha8Rng::seed_from_u64(mix.wrapping_add(1));
        let mut rng_b = ChaCha8Rng::seed_from_u64(mix.wrapping_add(2));
        self.order_a = (0..self.len_a).collect();
        self.order_b = (0..self.len_b).collect();
        self.order_a.shuffle(&mut rng_a);
        self.order_b.shuffle(&mut rng_b);
        self.cursor = 0;
    }

    /// Next joint batch; rolls into a freshly shuffled epoch when the
    /// current one is exhausted.
    pub fn next_batch(&mut self) -> BatchIndices {
        if self.cursor >= self.batches_per_epoch {
            self.epoch += 1;
            self.reshuffle();
        }
        let lo = self.cursor * self.batch;
        let hi = lo + self.batch;
        self.cursor += 1;
        BatchIndices {
            a: self.order_a[lo..hi].to_vec(),
            b: self.order_b[lo..hi].to_vec(),
        }
    }
}
