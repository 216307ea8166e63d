//! Deterministic, parallel-friendly random streams.
//!
//! Every random object (a link, a site of a noise vector) draws from its own
//! ChaCha stream selected by `(seed, domain, index)`, so fills are identical
//! regardless of thread count or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains keep link fields, noise vectors and test draws apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    SmearedLinks = 1,
    NaikLinks = 2,
    Rhs = 3,
    Noise = 4,
    General = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for element `index` of `domain` under a user seed.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain as u64)));
    rng.set_stream(index);
    rng
}

/// Plain seeded generator for callers that draw sequentially.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
