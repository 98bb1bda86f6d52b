use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Mini-batch schedule: each epoch is a seeded shuffle of `[0, n)` cut into
/// consecutive batches (sampling without replacement within an epoch).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    n: usize,
    batch_size: usize,
    seed: u64,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(BatchPlan {
            n,
            batch_size,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// `⌈n / batch_size⌉`.
    pub fn steps_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut seed::rng(seed::derive(self.seed, epoch)));
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_covers_every_index_once() {
        let plan = BatchPlan::new(1000, 128, 5).unwrap();
        let batches = plan.epoch(3);
        assert_eq!(batches.len(), plan.steps_per_epoch());
        assert_eq!(batches.len(), 8);
        assert_eq!(batches.last().unwrap().len(), 1000 - 7 * 128);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_epoch() {
        let plan = BatchPlan::new(50, 7, 9).unwrap();
        assert_eq!(plan.epoch(1), plan.epoch(1));
        assert_ne!(plan.epoch(1), plan.epoch(2));
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(BatchPlan::new(10, 0, 0).is_err());
    }
}
