//! Inputs shared by the benchmarks.

use poolforge::tensor::random;
use poolforge::{ModelConfig, Tensor};

/// Standard-normal frames `[batch, frames, video + audio]` for `config`.
pub fn frames(config: &ModelConfig, batch: usize, seed: u64) -> Tensor {
    random::normal([batch, config.frames, config.input_dim()], 1.0, &mut random::rng(seed))
}

/// Multi-hot targets with every video tagged by label `video % labels`.
pub fn targets(config: &ModelConfig, batch: usize) -> Tensor {
    let mut t = Tensor::zeros([batch, config.labels]);
    for b in 0..batch {
        t.data_mut()[b * config.labels + b % config.labels] = 1.0;
    }
    t
}
