//! Deterministic RNG streams.
//!
//! Every random draw in a run is keyed by `(seed, round, client, purpose)`,
//! so trajectories are pure functions of the configuration: thread count,
//! client evaluation order, and checkpoint/resume boundaries cannot change
//! results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable tags separating the independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Server-side client sampling for a round.
    Select,
    /// Mini-batch shuffling inside a client's local solver.
    Batch,
    /// Byzantine message corruption.
    Attack,
    /// Choice of the malicious client set.
    MaliciousSet,
    /// Dataset synthesis and partitioning.
    Data,
    /// Model weight initialization.
    Init,
    /// Personalized phase of baselines that train two models per round.
    Personal,
    /// Fixed random projection matrices.
    Projection,
    /// Monte Carlo trials in oracles.
    Trial,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Select => 1,
            Purpose::Batch => 2,
            Purpose::Attack => 3,
            Purpose::MaliciousSet => 4,
            Purpose::Data => 5,
            Purpose::Init => 6,
            Purpose::Personal => 7,
            Purpose::Projection => 8,
            Purpose::Trial => 9,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// RNG for a `(seed, round, client, purpose)` cell. Round-independent draws
/// pass `round = 0`; client-independent draws pass `client = u64::MAX`.
pub fn stream(seed: u64, round: u64, client: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ 0x464c414d45u64); // domain-separate from raw seeds
    state = splitmix64(state ^ round);
    state = splitmix64(state ^ client.wrapping_mul(0x9e3779b97f4a7c15));
    state = splitmix64(state ^ purpose.tag());
    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream not tied to rounds or clients (dataset synthesis, trial loops).
pub fn global_stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    stream(seed, 0, u64::MAX, purpose)
}
