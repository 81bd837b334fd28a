//! Seed derivation for independent run streams.
//!
//! Every run owns a `ChaCha8Rng` seeded from `derive_seed(master, index)`,
//! so results do not depend on scheduling or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// splitmix64(master + index·φ), φ the 64-bit golden ratio constant.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_mul(GOLDEN)))
}

pub fn run_rng(master: u64, index: u64) -> RunRng {
    RunRng::seed_from_u64(derive_seed(master, index))
}
