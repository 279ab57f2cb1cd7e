//! Seeded, domain-separated random streams.
//!
//! Every consumer of randomness derives a ChaCha8 generator keyed by the
//! master seed and a [`Domain`] tag, so changing how one stage draws never
//! shifts another stage's numbers. Per-cell draws (row, question, instance)
//! seek to a fixed word position instead of consuming a shared sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Shuffle = 2,
    Instantiate = 3,
    RandomizedResponse = 4,
    Bootstrap = 5,
    PrivacySample = 6,
    Testbed = 7,
}

/// Generator keyed by `(seed, domain)`.
pub fn keyed(seed: u64, domain: Domain) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Addressable uniform draws: `uniform(stream, index)` is a pure function of
/// its arguments and the key.
#[derive(Clone)]
pub struct CellStream {
    rng: ChaCha8Rng,
}

impl CellStream {
    pub fn new(seed: u64, domain: Domain) -> Self {
        CellStream {
            rng: keyed(seed, domain),
        }
    }

    /// Uniform in `[0, 1)` for cell `index` of sub-stream `stream`.
    pub fn uniform(&mut self, stream: u64, index: u64) -> f64 {
        self.rng.set_stream(stream);
        // one f64 consumes a u64, i.e. two 32-bit words
        self.rng.set_word_pos(u128::from(index) * 2);
        self.rng.random::<f64>()
    }
}
