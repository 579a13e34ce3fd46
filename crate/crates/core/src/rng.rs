//! Seeded Gaussian streams.
//!
//! ChaCha20 keyed by the 64-bit seed, normals via the ziggurat sampler of
//! `rand_distr::StandardNormal`. Both are specified algorithms, so a given seed
//! yields the same sequence on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Standard normal draw.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn fill_normal(&mut self, std: f64, out: &mut [f64]) {
        for v in out {
            *v = std * self.normal();
        }
    }
}
