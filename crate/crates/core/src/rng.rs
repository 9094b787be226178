//! Seeded random streams.
//!
//! Every stochastic component draws from ChaCha8 (a counter-based stream
//! cipher generator) keyed by a 64-bit seed, with an independent 64-bit
//! stream id per consumer. Output is identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids reserved for fixed consumers; EMC rungs use `RUNG_BASE + rung`.
pub const MATRIX_STREAM: u64 = 0;
pub const EXCHANGE_STREAM: u64 = 1;
pub const BOOTSTRAP_STREAM: u64 = 2;
pub const RUNG_BASE: u64 = 1 << 32;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
