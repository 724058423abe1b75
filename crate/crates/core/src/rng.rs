//! Seeded random streams.
//!
//! All randomness comes from ChaCha8, a counter-based generator: a 64-bit
//! seed selects the key and a 64-bit stream id selects an independent
//! keystream. Every consumer derives its own stream from `(seed, domain,
//! index)`, so results do not depend on evaluation order or thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Prng = ChaCha8Rng;

/// Stream namespaces. The index occupies the low 48 bits of the stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Split = 1,
    GcnInit = 2,
    GcnDropout = 3,
    Sampling = 4,
    ModelInit = 5,
    Shuffle = 6,
    Dropout = 7,
    Synthetic = 8,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> Prng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | (index & 0xFFFF_FFFF_FFFF));
    rng
}

/// A 64-bit seed drawn from `stream(seed, domain, index)`, for consumers
/// that take a plain seed.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    stream(seed, domain, index).next_u64()
}
