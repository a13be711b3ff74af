//! Seeded random streams. Every consumer draws from its own ChaCha stream so
//! adding draws in one place never shifts another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

pub(crate) mod streams {
    pub const MODEL_NOISE: u64 = 1;
    pub const MODEL_SHAPE: u64 = 2;
    pub const FRAME: u64 = 3;
    pub const PROMPTS: u64 = 4;
    pub const SURROGATE: u64 = 5;
    pub const IDENTITY: u64 = 6;
    pub const MAPPER_INIT: u64 = 7;
    pub const TRAIN_POOL: u64 = 8;
    pub const EVAL_BATCH: u64 = 9;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gaussian(rng)).collect()
}

pub fn gaussian_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor {
        rows,
        cols,
        data: (0..rows * cols).map(|_| scale * gaussian(rng)).collect(),
    }
}

pub fn uniform_tensor(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor {
        rows,
        cols,
        data: (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
    }
}
