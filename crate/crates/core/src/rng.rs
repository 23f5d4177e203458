//! Named random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the study seed, with the
//! 64-bit ChaCha stream id encoding `(index, block)`. Streams never overlap,
//! so a replication draws the same numbers no matter which worker runs it
//! or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Variable blocks drawn from separate streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Block {
    Covariates = 0,
    Treatment = 1,
    EventTime = 2,
    Censoring = 3,
}

const BLOCK_BITS: u32 = 8;
/// Index domain reserved for truth-approximation chunks.
pub const TRUTH_DOMAIN: u64 = 1 << 54;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, index: u64) -> Self {
        assert!(
            index < (1 << (64 - BLOCK_BITS)),
            "stream index {index} too large"
        );
        Self { seed, index }
    }

    pub fn replication(seed: u64, replication: usize) -> Self {
        Self::new(seed, replication as u64)
    }

    pub fn truth_chunk(seed: u64, chunk: usize) -> Self {
        Self::new(seed, TRUTH_DOMAIN | chunk as u64)
    }

    pub fn rng(&self, block: Block) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((self.index << BLOCK_BITS) | block as u64);
        rng
    }
}
