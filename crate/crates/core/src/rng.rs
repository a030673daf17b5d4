//! Seeded random streams.
//!
//! Every stochastic component (weight init, batch shuffling, bootstrap
//! sampling, SMOTE interpolation, ...) draws from its own ChaCha12 stream
//! keyed by `(seed, purpose, index)`. Adding draws in one component can
//! therefore never shift the values another component sees, which is what
//! makes runs reproducible down to the bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::math;

/// Stream purposes. Fixed numbers; changing them changes every seeded run.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const SMOTE_NEIGHBOR: u64 = 4;
    pub const SMOTE_DELTA: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const TREE: u64 = 7;
    pub const GRADCHECK: u64 = 8;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha12 stream from `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha12Rng {
    let mut state = seed ^ purpose.rotate_left(24) ^ index.rotate_left(48);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Standard-normal draw via Box-Muller (two uniform draws per sample).
pub fn next_normal<R: Rng>(rng: &mut R) -> f64 {
    // gen::<f64>() is in [0, 1); flip so the log argument is in (0, 1].
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * math::PI * u2)
}
