//! Deterministic random-stream derivation.
//!
//! Simulations fan out over sweep points and replicates, sometimes in
//! parallel. Each unit of work draws from its own stream derived from the
//! base seed plus a path of integer components, so results do not depend on
//! scheduling order and reruns with the same seed are bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the SplitMix64 output function.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a path of stream components into a single derived seed.
pub fn derive_seed(base_seed: u64, path: &[u64]) -> u64 {
    let mut state = base_seed;
    let mut out = splitmix64(&mut state);
    for &component in path {
        state ^= component;
        out ^= splitmix64(&mut state);
    }
    out
}

/// Builds an independent generator for the stream named by `path`.
pub fn stream(base_seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base_seed, path))
}
