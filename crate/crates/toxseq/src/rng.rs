//! Deterministic random number generation.
//!
//! All stochastic operations in this crate draw from an explicitly passed
//! [`Rng`]. The generator is ChaCha8 seeded from a 64-bit value, so identical
//! seeds produce identical streams on every platform. `split` derives an
//! independent child generator, which keeps consumers insulated from how many
//! draws their siblings make.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent generator by drawing a fresh 64-bit seed.
    pub fn split(&mut self) -> Rng {
        Rng::new(self.inner.next_u64())
    }

    /// Uniform draw from [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in [0, bound).
    pub fn below(&mut self, bound: usize) -> usize {
        self.inner.gen_range(0..bound)
    }

    /// Draw from a normal distribution.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std)
            .expect("finite std")
            .sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        use rand::seq::SliceRandom;
        slice.shuffle(&mut self.inner);
    }
}
