//! Named, counter-derived random streams.
//!
//! Every consumer of randomness in this crate owns a stream addressed by a
//! root seed plus a tag path, e.g. `(seed, [PARTICLE, round, index])`. Streams
//! with distinct tag paths are independent, so particle work can be reordered
//! or parallelized without changing any draw; results are bitwise identical
//! to the sequential schedule.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed-increment mixer used for key derivation (splitmix64 finalizer).
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha8 stream from a root seed and a tag path.
pub fn stream_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x853c_49e6_748f_ea9b;
    let mut _absorb = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xd1b5_4a32_d192_ed03);
        _absorb = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// One uniform variate in `[0, 1)` with 53 bits of precision.
pub fn uniform_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF index draw over weights that sum to one, walking indices in
/// ascending order. Zero-weight entries can never be selected: the running
/// sum does not advance past them, and the comparison is strict.
pub fn categorical_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // Rounding can leave acc marginally below 1; fall back to the last
    // positive-weight index.
    last_positive
}
