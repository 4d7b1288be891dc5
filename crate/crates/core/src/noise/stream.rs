//! Counter-based random streams.
//!
//! A stream is addressed by `(master_seed, worker, round, step)`. The four
//! words are packed verbatim into a ChaCha8 key, so distinct coordinates
//! always key distinct generators and no RNG state is ever shared between
//! workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub worker: u64,
    pub round: u64,
    pub step: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, worker: u64, round: u64, step: u64) -> Self {
        Self { master_seed, worker, round, step }
    }

    /// A stream for one-off experiments that are not tied to an optimizer
    /// step; `tag` plays the role of the worker coordinate.
    pub fn aux(master_seed: u64, tag: u64) -> Self {
        Self::new(master_seed, tag, u64::MAX, u64::MAX)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (chunk, word) in key
            .chunks_exact_mut(8)
            .zip([self.master_seed, self.worker, self.round, self.step])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}
