//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose key is
//! built from the master seed plus a small path of indices (purpose tag,
//! scenario, replicate) and whose stream id is the innermost index. ChaCha is
//! counter-based, so streams are independent and a replicate's draws depend
//! only on its path, never on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams of different roles disjoint.
pub mod tags {
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const SIMULATE: u64 = 0x7369_6d75;
    pub const BOOTSTRAP_SEED: u64 = 0x6273_6565;
}

pub fn stream(seed: u64, tag: u64, a: u64, b: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, tag, a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
