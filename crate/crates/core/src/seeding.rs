//! Deterministic derivation of sub-stream seeds.
//!
//! Every random draw in the crate is keyed off an explicit 64-bit seed. When
//! one master seed has to feed several independent streams (channels of a
//! noise realization, trials of a growth loop, cells of a study grid), the
//! sub-seeds are derived with a splitmix64 mix so that runs are reproducible
//! regardless of evaluation order or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a sequence of stream tags into a new seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag));
    }
    state
}

/// Stable tag for string-labelled streams ("noise", "grow", ...).
pub fn tag(label: &str) -> u64 {
    let mut state = 0xcbf2_9ce4_8422_2325u64; // FNV-1a
    for b in label.as_bytes() {
        state ^= *b as u64;
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
    state
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
