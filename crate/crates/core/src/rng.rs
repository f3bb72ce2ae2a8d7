//! Counter-keyed random substreams.
//!
//! Every random draw in the crate comes from a generator addressed by a
//! path of integers `(seed, i, j, ...)`. Two different paths give
//! statistically independent ChaCha streams and the same path always gives
//! the same stream, so results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    path: Vec<u64>,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { path: vec![seed] }
    }

    pub fn seed(&self) -> u64 {
        self.path[0]
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self { path }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut state = 0x243f_6a88_85a3_08d3u64 ^ (self.path.len() as u64);
        let mut key = [0u8; 32];
        for &word in &self.path {
            state = splitmix64(state ^ splitmix64(word));
        }
        let mut s = state;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha12Rng::from_seed(key)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
