//! Seeded random streams.
//!
//! Every consumer derives its own stream from `(seed, purpose, index)`, so
//! results do not depend on iteration order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Purposes that get independent streams from the same seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Rollout = 3,
    Evaluate = 4,
    Augment = 5,
    Split = 6,
    Noise = 7,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let a = splitmix(seed ^ splitmix(purpose as u64));
    ChaCha8Rng::seed_from_u64(splitmix(a ^ splitmix(index.wrapping_add(0x5851_f42d))))
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
