//! Deterministic RNG substreams.
//!
//! Every random draw in the crate comes from a stream derived from a master
//! seed plus a list of integer tags (purpose, time step, replicate, ...).
//! Streams for distinct tag lists are statistically independent, and the
//! mapping is a pure function of the tags, so parallel schedules cannot
//! reorder draws: each consumer owns its own stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Draw purposes used as the leading substream tag.
pub mod purpose {
    pub const SIM_INITIAL: u64 = 1;
    pub const SIM_TRANSITION: u64 = 2;
    pub const SIM_MEASUREMENT: u64 = 3;
    pub const PF_INITIAL: u64 = 4;
    pub const PF_TRANSITION: u64 = 5;
    pub const PF_RESAMPLE: u64 = 6;
    pub const REPLICATE: u64 = 7;
    pub const PERTURB: u64 = 8;
    pub const MONTE_CARLO: u64 = 9;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Collapses `(master, tags)` into a single 64-bit stream seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master ^ 0x6a09e667f3bcc908;
    let mut acc = splitmix64(&mut state);
    for &tag in tags {
        state ^= tag.wrapping_mul(0x2545f4914f6cdd1d);
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Returns the ChaCha stream identified by `(master, tags)`.
pub fn substream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = derive_seed(master, tags);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
