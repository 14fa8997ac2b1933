//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded with the run seed and a fixed stream id. ChaCha supports 2^64
//! independent streams per seed, so each consumer (data, noise, init, eval, ...)
//! gets its own stream and adding a consumer never shifts another one's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Well-known stream ids.
pub mod streams {
    pub const SAMPLE: u64 = 0;
    pub const CRITIC_INIT: u64 = 1;
    pub const GENERATOR_INIT: u64 = 2;
    pub const HEAD_INIT: u64 = 3;
    pub const DATA_P: u64 = 10;
    pub const DATA_Q: u64 = 11;
    pub const NOISE: u64 = 12;
    pub const INTERPOLATE: u64 = 13;
    pub const MINIBATCH: u64 = 14;
    pub const EVAL_P: u64 = 20;
    pub const EVAL_Q: u64 = 21;
    pub const PROXY: u64 = 22;
    pub const PROXY_NOISE: u64 = 23;
    pub const LABELED_SET: u64 = 30;
    pub const LABELED_BATCH: u64 = 31;
    pub const CLASS_PRIOR: u64 = 32;
    pub const HELD_OUT: u64 = 33;
    pub const MONTE_CARLO: u64 = 40;
}

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
