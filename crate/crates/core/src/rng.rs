//! Deterministic random substreams.
//!
//! Every random draw in the crate comes from a ChaCha20 stream whose key is
//! derived from `(seed, tag)` and whose stream id is an item index, so work
//! split across threads reproduces bit-for-bit regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for item `index` of the task identified by `tag`.
pub fn substream(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut state = seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// A fresh seed for a sub-task, e.g. one target time of a batch.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    use rand::RngCore;
    substream(seed, tag, index).next_u64()
}

/// Tag for a sampler block at a given sweep.
pub fn sweep_tag(iteration: usize, block: u64) -> u64 {
    (iteration as u64) << 8 | block
}
