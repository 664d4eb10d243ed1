use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries drawn uniformly from `[-bound, bound]`.
pub fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Seed for item `index` of a fan-out derived from `base`.
pub fn item_seed(base: u64, index: u64) -> u64 {
    base ^ index
}
