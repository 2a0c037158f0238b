//! Deterministic per-agent, per-round random streams.
//!
//! Every stream is a ChaCha8 keystream whose key comes from the master seed and
//! whose 64-bit stream id packs `(purpose, agent, round)`. Distinct triples get
//! distinct stream ids, so no stream is ever shared between agents or rounds
//! and results do not depend on how agents are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Metric evaluation never draws from the
/// optimization streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Sampling = 0,
    Metrics = 1,
    Setup = 2,
}

const AGENT_BITS: u32 = 30;
const ROUND_BITS: u32 = 32;

/// Sampling stream for `agent` at `round`.
pub fn rng_stream(master_seed: u64, agent: usize, round: u64) -> Stream {
    stream_for(master_seed, Purpose::Sampling, agent, round)
}

pub fn stream_for(master_seed: u64, purpose: Purpose, agent: usize, round: u64) -> Stream {
    assert!((agent as u64) < (1 << AGENT_BITS), "agent index {agent} exceeds stream id space");
    assert!(round < (1 << ROUND_BITS), "round {round} exceeds stream id space");
    let id = ((purpose as u64) << (AGENT_BITS + ROUND_BITS)) | ((agent as u64) << ROUND_BITS) | round;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(id);
    rng
}
