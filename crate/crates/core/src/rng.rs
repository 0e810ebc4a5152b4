//! Counter-based random streams.
//!
//! Every `(agent, round)` pair gets its own ChaCha stream derived from the
//! root seed, so draws do not depend on the order agents are processed in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Round slot reserved for drawing initial values.
const INIT_ROUND: u64 = u32::MAX as u64;

pub fn agent_round_rng(root_seed: u64, agent: usize, round: usize) -> StreamRng {
    stream(root_seed, agent as u64, round as u64)
}

pub fn initial_value_rng(root_seed: u64) -> StreamRng {
    stream(root_seed, 0, INIT_ROUND)
}

fn stream(root_seed: u64, agent: u64, round: u64) -> StreamRng {
    debug_assert!(agent <= u32::MAX as u64 && round <= u32::MAX as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream((round << 32) | agent);
    rng
}
