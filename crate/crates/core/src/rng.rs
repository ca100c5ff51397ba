//! Reproducible random streams.
//!
//! Stream format (frozen):
//! - generator: ChaCha20 (`rand_chacha::ChaCha20Rng`), a counter-based
//!   generator with a 64-bit stream selector;
//! - key: the 32-byte seed whose first 8 bytes are `master_seed` in
//!   little-endian order and whose remaining 24 bytes are zero;
//! - stream: `stream_id` is passed to `set_stream`, word position 0;
//! - uniforms: `u = ((next_u64() >> 11) + 1) · 2⁻⁵³ ∈ (0, 1]`;
//! - normals: Box–Muller on consecutive uniform pairs `(u₁, u₂)`, yielding
//!   `√(−2 ln u₁)·cos(2πu₂)` then `√(−2 ln u₁)·sin(2πu₂)`.

use std::f64::consts::TAU;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        RngSpec { master_seed, stream_id }
    }

    pub fn normals(&self) -> NormalStream {
        NormalStream::new(*self)
    }
}

/// Standard-normal variates from one [`RngSpec`] stream.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(spec: RngSpec) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&spec.master_seed.to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(spec.stream_id);
        NormalStream { rng, spare: None }
    }

    /// Uniform on (0, 1].
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill_normals(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_spec_same_stream() {
        let mut a = RngSpec::new(7, 3).normals();
        let mut b = RngSpec::new(7, 3).normals();
        for _ in 0..100 {
            assert_eq!(a.next_normal().to_bits(), b.next_normal().to_bits());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngSpec::new(7, 0).normals();
        let mut b = RngSpec::new(7, 1).normals();
        let va: Vec<f64> = (0..8).map(|_| a.next_normal()).collect();
        let vb: Vec<f64> = (0..8).map(|_| b.next_normal()).collect();
        assert_ne!(va, vb);
    }

    #[test]
    fn uniform_range() {
        let mut s = RngSpec::new(1, 1).normals();
        for _ in 0..10_000 {
            let u = s.next_uniform();
            assert!(u > 0.0 && u <= 1.0);
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = RngSpec::new(42, 0).normals();
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // 5 standard errors
        assert!(mean.abs() < 5.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt(), "var {var}");
    }
}
