//! Seed derivation. Every random stream is keyed by `(master, size, sample)`
//! so that adding sizes or samples never perturbs existing ones, and parallel
//! scheduling never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, size_index: u64, sample_index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ size_index) ^ sample_index.rotate_left(17))
}

pub fn rng_for(master: u64, size_index: u64, sample_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, size_index, sample_index))
}
