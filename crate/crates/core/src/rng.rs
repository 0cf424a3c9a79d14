//! Seeded random streams. Every consumer derives its own ChaCha stream from
//! `(seed, purpose)`, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::ParamVector;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, purpose: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| normal(rng)).collect()
}

pub fn normal_param(rng: &mut Rng, len: usize) -> ParamVector {
    ParamVector::from_raw(normal_vec(rng, len))
}
