//! Seed derivation.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed, a purpose tag and an index, so adding a node or a probe never
//! shifts the draws seen by anyone else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Noise = 2,
    Data = 3,
    Partition = 4,
    Corpus = 5,
    Probe = 6,
    Cluster = 7,
    Classifier = 8,
    Synthesis = 9,
}

/// Index used for coordinator-owned streams.
pub const COORDINATOR: u64 = u32::MAX as u64;

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) ^ index);
    rng
}
