//! Deterministic named random streams.
//!
//! Every source of randomness in a run is a ChaCha8 stream keyed by
//! `(seed, replication, system, purpose)`. Splitting work across stages or
//! re-running a replication therefore consumes bit-identical random numbers,
//! which is what makes budget accounting and CSV output reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Streams with different purposes are
/// independent even for the same (replication, system).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Stochastic gradient draws consumed by an optimizer.
    Gradient,
    /// Upper-level H draws consumed by a prune session.
    Function,
    /// Auxiliary draws (test harnesses, synthetic oracles).
    Auxiliary,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Gradient => 1,
            StreamPurpose::Function => 2,
            StreamPurpose::Auxiliary => 3,
        }
    }
}

/// splitmix64 finalizer; full-period mixer over u64.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the ChaCha8 stream for `(seed, replication, system, purpose)`.
pub fn stream(seed: u64, replication: u64, system: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut state = seed;
    for component in [replication, system, purpose.tag()] {
        let mixed = splitmix64(&mut state);
        state ^= component.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ mixed;
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
