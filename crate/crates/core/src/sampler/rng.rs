//! Counter-based random streams.
//!
//! Each chain owns a ChaCha key derived from `(seed, chain)`. Within a chain a
//! stream is addressed by `(iteration, block, index)`, so the numbers drawn by
//! an update depend only on where it sits in the sweep, never on thread
//! scheduling or on how many numbers earlier updates consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Block {
    Init = 0,
    Alpha = 1,
    Items = 2,
    QRows = 3,
    Theta = 4,
    Beta = 5,
    Gamma01 = 6,
    Gamma10 = 7,
    Data = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainKey {
    key: [u8; 32],
}

impl ChainKey {
    pub fn new(seed: u64, chain: usize) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&(chain as u64).to_le_bytes());
        key[16..24].copy_from_slice(b"dinatrce");
        ChainKey { key }
    }

    /// Stream for `(iteration, block, index)`; `index` must fit in 24 bits.
    pub fn stream(&self, iteration: u64, block: Block, index: usize) -> ChaCha8Rng {
        debug_assert!(index < 1 << 24 && iteration < 1 << 32);
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream((iteration << 32) | ((block as u64) << 24) | index as u64);
        rng
    }
}
