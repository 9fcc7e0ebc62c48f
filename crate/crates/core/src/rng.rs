//! Seeded random streams.
//!
//! Every stream is ChaCha20 (`rand_chacha::ChaCha20Rng`), a counter-based
//! generator whose output is fixed across platforms. A `(seed, stream)` pair
//! selects an independent sequence, which is how sweeps derive per-trial
//! randomness. Gaussian draws use inverse-CDF sampling so each variate
//! consumes exactly one 64-bit word.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::distribution::{ContinuousCDF, Normal};

pub struct Stream {
    rng: ChaCha20Rng,
    normal: Normal,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            normal: Normal::standard(),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn open_unit(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u = self.open_unit();
        self.normal.inverse_cdf(u)
    }

    pub fn sign(&mut self) -> f64 {
        if self.rng.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}
