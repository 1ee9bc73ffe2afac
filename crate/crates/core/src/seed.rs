//! Deterministic seed derivation.
//!
//! Every random draw in a run comes from a stream keyed by the run seed plus
//! a tuple of integers naming the draw site (round, agent, post, ...). Streams
//! are independent of scheduling order, so concurrent decision phases and
//! resumed runs see exactly the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Draw-site tags. Kept distinct so two sites never share a stream.
pub mod site {
    pub const POPULATION: u64 = 1;
    pub const GRAPH: u64 = 2;
    pub const DECIDE: u64 = 3;
    pub const EXPOSURE: u64 = 4;
    pub const CANDIDATES: u64 = 5;
    pub const MEMORY: u64 = 6;
    pub const NET_INIT: u64 = 7;
    pub const POLICY: u64 = 8;
    pub const SEEDING: u64 = 9;
    pub const PROFILE: u64 = 10;
    pub const DPO: u64 = 11;
    pub const BENCH: u64 = 12;
    pub const FEED_ORDER: u64 = 13;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` with a splitmix64 chain.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, parts))
}

/// Stable 64-bit FNV-1a hash for strings used as seed material.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
