//! Seeded tensor initializers.
//!
//! All randomness in the crate flows through [`ChaCha8Rng`], whose stream is
//! defined by its algorithm, so seeds reproduce across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a stream id.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn normal(shape: impl Into<Shape>, std: f64, rng: &mut impl Rng) -> Tensor {
    let shape = shape.into();
    let data = (0..shape.numel())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect();
    Tensor::from_parts(shape, data)
}

pub fn uniform(shape: impl Into<Shape>, low: f64, high: f64, rng: &mut impl Rng) -> Tensor {
    let shape = shape.into();
    let data = (0..shape.numel()).map(|_| rng.gen_range(low..high)).collect();
    Tensor::from_parts(shape, data)
}

/// Glorot-uniform weights for a `[fan_in, fan_out]` matrix.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform([fan_in, fan_out], -limit, limit, rng)
}
