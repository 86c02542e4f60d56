//! Seeded random streams.
//!
//! Every stochastic component takes an explicit `&mut impl Rng`. Long-lived
//! streams (one per experiment) are [`ChaCha8Rng`] so the cursor can be
//! persisted and restored exactly; child seeds are derived with SplitMix64 so
//! replications and sub-streams never depend on scheduling order.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Stream used by an experiment, positioned at the start of `seed`.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent child seed from `(parent, index)`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Fresh seed from OS entropy, for callers that did not supply one.
pub fn fresh_seed() -> u64 {
    use rand::Rng;
    rand::rng().random()
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
