//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by the master
//! seed (expanded with `SeedableRng::seed_from_u64`) and selected by a 64-bit
//! stream index `(lane << 32) | chunk`. Lanes separate independent roles
//! (walk increments, supremum samples, fixed-point partners, ...); chunks
//! split an ensemble into fixed-size blocks of paths so that results do not
//! depend on how blocks are scheduled across workers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Paths per chunk. Part of the reproducibility contract: changing it changes
/// every ensemble.
pub const CHUNK: usize = 1024;

/// Lanes used by the library.
pub mod lane {
    pub const WALK: u32 = 1;
    pub const SUP: u32 = 2;
    pub const SUP_PARTNER: u32 = 3;
    pub const PAIR: u32 = 4;
    pub const MIN_MOMENT_PAIR: u32 = 5;
    pub const MIN_MOMENT_SUP: u32 = 6;
    pub const ARB: u32 = 7;
    pub const PLUGIN_PAIR: u32 = 8;
    pub const PLUGIN_SUP: u32 = 9;
}

pub fn stream_index(lane: u32, chunk: u32) -> u64 {
    ((lane as u64) << 32) | chunk as u64
}

#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn for_chunk(seed: u64, lane: u32, chunk: u32) -> Self {
        Self::new(seed, stream_index(lane, chunk))
    }

    /// Position the stream at a given count of 64-bit words.
    pub fn seek_u64(&mut self, words: u64) {
        self.inner.set_word_pos(words as u128 * 2);
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by Box-Muller; consumes exactly two words.
    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        let u1 = self.open01();
        let u2 = self.open01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
