//! Named, seeded random streams.
//!
//! Every random draw in a run comes from a stream derived from the run seed,
//! a stream name and a few indices (epoch, rollout, ...). Streams are
//! independent of evaluation order, so parallel rollouts stay reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const ENV_INSTANCE: &str = "env-instance";
pub const ROLLOUT: &str = "rollout";
pub const SPARSIFIER: &str = "sparsifier";
pub const INIT: &str = "init";

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream `(seed, name, indices...)`.
pub fn stream_seed(seed: u64, name: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for b in name.bytes() {
        h = splitmix(h ^ b as u64);
    }
    for &i in indices {
        h = splitmix(h ^ splitmix(i));
    }
    h
}

pub fn stream(seed: u64, name: &str, indices: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(seed, name, indices))
}
