//! Seeded parameter initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// RNG used everywhere randomness enters the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor with entries drawn uniformly from `[-bound, bound]`.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    if bound > 0.0 {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-bound..=bound));
    }
    t
}

/// Glorot-uniform bound for feed-forward and convolutional weights.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform bound for recurrent weights.
pub fn recurrent_bound(hidden: usize) -> f64 {
    (1.0 / hidden as f64).sqrt()
}
