//! Deterministic seed derivation.
//!
//! All randomness flows from one master seed. Independent sub-streams are
//! addressed by a counter, so parallel work derives its own seed without any
//! dependence on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator on an independent stream of the master seed.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// A child seed drawn from the addressed stream.
pub fn child_seed(master: u64, stream: u64) -> u64 {
    stream_rng(master, stream).random::<u64>()
}
