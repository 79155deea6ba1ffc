//! Seed derivation. Every random decision in the crate draws from a ChaCha
//! stream keyed by the run seed plus a purpose tag and counters, so turning
//! one component off never shifts another component's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod purpose {
    pub const DIRECTIONS: u64 = 1;
    pub const SAMPLES: u64 = 2;
    pub const DROP: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const PAIRS: u64 = 5;
    pub const PROTO_SELECT: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const INIT: u64 = 8;
    pub const MIXUP: u64 = 9;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}
