use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;

/// Picks a dataset with probability proportional to its size, then serves
/// its samples in shuffled passes without replacement.
#[derive(Clone, Debug)]
pub struct ProportionalSampler {
    sizes: Vec<usize>,
    total: usize,
    queues: Vec<Vec<usize>>,
}

impl ProportionalSampler {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if total == 0 {
            return Err(Error::config("proportional sampler needs a positive total size"));
        }
        if sizes.contains(&0) {
            return Err(Error::config("every sampled dataset must be non-empty"));
        }
        Ok(ProportionalSampler { sizes: sizes.to_vec(), total, queues: vec![Vec::new(); sizes.len()] })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.sizes.iter().map(|&s| s as f64 / self.total as f64).collect()
    }

    pub fn pick_dataset(&self, rng: &mut impl Rng) -> usize {
        let mut u = rng.random_range(0..self.total);
        for (i, &s) in self.sizes.iter().enumerate() {
            if u < s {
                return i;
            }
            u -= s;
        }
        unreachable!("u < total")
    }

    /// Next index of dataset `ds`, starting a reshuffled pass when the
    /// current one is used up.
    pub fn next_index(&mut self, ds: usize, rng: &mut impl Rng) -> usize {
        let queue = &mut self.queues[ds];
        if queue.is_empty() {
            *queue = (0..self.sizes[ds]).collect();
            queue.shuffle(rng);
        }
        queue.pop().expect("refilled")
    }

    pub fn next(&mut self, rng: &mut impl Rng) -> (usize, usize) {
        let ds = self.pick_dataset(rng);
        (ds, self.next_index(ds, rng))
    }

    /// A batch drawn from one dataset (chosen proportionally).
    pub fn next_batch(&mut self, batch: usize, rng: &mut impl Rng) -> (usize, Vec<usize>) {
        let ds = self.pick_dataset(rng);
        let n = batch.min(self.sizes[ds]);
        (ds, (0..n).map(|_| self.next_index(ds, rng)).collect())
    }
}
