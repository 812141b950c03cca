//! Seed fan-out.
//!
//! Every random decision in the toolkit derives its own stream from one
//! root seed plus a list of integer tags (purpose, epoch, batch, sample,
//! view). Streams are independent of scheduling, so worker parallelism
//! cannot change results.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Tag namespaces for seed derivation, one per consumer.
pub mod tag {
    pub const SYNTH: u64 = 1;
    pub const KFOLD: u64 = 2;
    pub const BALANCED: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const MIXUP: u64 = 5;
    pub const INIT: u64 = 6;
    pub const EPOCH_SHUFFLE: u64 = 7;
    pub const PROTOTYPES: u64 = 8;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a root seed and a tag path.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(root ^ 0x5353_4c4b_4954_0001);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    state
}

/// A counter-based RNG stream for the given root seed and tag path.
pub fn stream(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tags))
}
