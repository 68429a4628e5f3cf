//! Counter-based random streams.
//!
//! Every random draw in the workbench comes from a ChaCha8 stream whose key is
//! derived from `(master_seed, substream)` and whose 64-bit stream id is the
//! sample index. A sample's randomness is therefore a pure function of its
//! seed and does not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies the random stream of one Monte Carlo realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleSeed {
    pub master_seed: u64,
    pub sample_index: u64,
}

impl SampleSeed {
    pub fn new(master_seed: u64, sample_index: u64) -> Self {
        Self {
            master_seed,
            sample_index,
        }
    }

    /// Independent stream for one purpose (`substream`) of this sample.
    pub fn rng(&self, substream: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.master_seed ^ substream.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.sample_index);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
