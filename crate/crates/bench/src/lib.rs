//! Shared fixtures for the kernel benchmarks.

use rand::Rng;
use sepbn_core::{rng, Tensor};

/// `U(-1, 1)` tensor of the given shape.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::stream(seed, &[]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}
