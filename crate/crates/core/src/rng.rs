//! Named, independent random streams derived from one master seed.
//!
//! Every consumer of randomness (outcome sampling, assignment sampling,
//! model initialization, triplet sampling, random rankers) draws from its own
//! ChaCha stream. The stream id is a fixed tag combined with a per-consumer
//! index (replicate number, training seed...), so adding draws in one place
//! never shifts another consumer's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Outcomes = 1,
    Assignments = 2,
    ModelInit = 3,
    Triplets = 4,
    RandomRanker = 5,
    SyntheticBase = 6,
    SyntheticLog = 7,
}

/// Returns the generator for `stream`, sub-indexed by `index`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}
