//! Explicitly seeded random number generation.
//!
//! Every random draw in the crate goes through [`SeededRng`], a ChaCha8 stream
//! cipher generator (`rand_chacha::ChaCha8Rng`) keyed from a 64-bit seed via
//! `SeedableRng::seed_from_u64`. ChaCha output is defined bit-for-bit and does
//! not depend on the host platform, so a seed fully determines a sample stream.
//!
//! Independent streams for parallel work are derived with [`split_seed`]:
//!
//! ```text
//! h0 = seed
//! h(k+1) = splitmix64(h(k) ^ splitmix64(index(k) + 0x9E3779B97F4A7C15))
//! ```
//!
//! so that the seed of a task depends only on the master seed and the task's
//! index path, never on scheduling order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and an index path.
pub fn split_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |h, &index| {
        splitmix64(h ^ splitmix64(index.wrapping_add(GOLDEN_GAMMA)))
    })
}

/// A seeded, platform-independent generator. Not shareable across threads;
/// derive per-task generators with [`SeededRng::split`].
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this generator was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator for the task at `path` under this generator's seed.
    /// Does not advance `self`.
    pub fn split(&self, path: &[u64]) -> SeededRng {
        SeededRng::new(split_seed(self.seed, path))
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
