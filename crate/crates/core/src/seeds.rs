//! Counter-based seed derivation.
//!
//! One master seed fans out into independent ChaCha streams, one per
//! purpose, and each stream is addressed by a counter (usually the training
//! step). Any `(stream, counter)` pair can be regenerated without replaying
//! earlier draws, which is what makes resumed runs identical to
//! uninterrupted ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes that get their own random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Quadrature = 2,
    TimeGrid = 3,
    Index = 4,
    Data = 5,
    Eval = 6,
    Aux = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSplitter {
    master: u64,
}

impl SeedSplitter {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn rng(&self, stream: Stream, counter: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream as u64);
        rng.set_word_pos((counter as u128) << 40);
        rng
    }
}
