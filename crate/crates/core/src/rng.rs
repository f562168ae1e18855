//! Seed derivation. Every random stream in the crate comes from a
//! `(seed, purpose, index)` triple so results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream purposes.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    Synthetic = 1,
    Split = 2,
    Imitation = 3,
    Init = 4,
    Shuffle = 5,
    EpochImitation = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(seed, purpose, index)`.
pub fn derive_seed(seed: u64, purpose: Stream, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(purpose as u64)).wrapping_add(index))
}

pub fn stream(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}
