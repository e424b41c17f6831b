//! Seed splitting.
//!
//! Every random consumer in an experiment derives its generator from the one
//! experiment seed plus a fixed offset. Model `m` of the unimodal phase uses
//! `seed + m` and the multimodal model uses `seed` itself, so a single-modality
//! experiment trains the unimodal and multimodal model from the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: u64 = 1_000;
pub const SPLIT: u64 = 2_000;
pub const MI_JITTER: u64 = 3_000;
pub const GRAD_PROBES: u64 = 4_000;
/// Added to a model seed to get its minibatch-shuffle stream.
pub const SHUFFLE: u64 = 500_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(offset)
}
