//! Seeded random sampling.
//!
//! Every stochastic routine in the crate draws from a [`SeededRng`]. Child
//! streams are derived by hashing `(seed, stream)` so that per-episode and
//! per-component randomness stays reproducible regardless of execution order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TidalError};
use crate::math::Matrix;

/// Deterministic random stream: identical seeds yield identical draws.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer; used to derive decorrelated child seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream; does not advance `self`.
    pub fn derive(&self, stream: u64) -> SeededRng {
        SeededRng::new(mix_seed(self.seed, stream))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.random::<bool>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }
}

/// Maps a uniform draw to flow time: `s = u^(1/alpha)` is Beta(alpha, 1)
/// distributed, and the returned time is `1 - s`.
pub fn beta_time_from_uniform(u: f64, alpha: f64) -> f64 {
    let s = u.powf(1.0 / alpha);
    1.0 - s
}

/// Draws flow time biased toward the noise source.
///
/// Only `beta == 1.0` is supported, where the inverse CDF has a closed form.
pub fn sample_beta_time(rng: &mut SeededRng, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(TidalError::Config(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    if beta != 1.0 {
        return Err(TidalError::Unsupported(format!(
            "only beta = 1.0 is supported, got {beta}"
        )));
    }
    Ok(beta_time_from_uniform(rng.uniform(), alpha))
}

/// `horizon x action_dim` matrix of i.i.d. standard normal entries.
pub fn sample_gaussian_chunk(rng: &mut SeededRng, horizon: usize, action_dim: usize) -> Matrix {
    Matrix::from_fn(horizon, action_dim, |_, _| rng.gaussian())
}
