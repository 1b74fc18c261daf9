//! Reproducible random streams.
//!
//! Every random quantity in the crate comes from ChaCha8 (`rand_chacha`), a
//! counter-based generator whose output is fixed by its seed and stream id on
//! every platform. Gaussian variates are produced with the Box–Muller
//! transform written out here, so no sampling algorithm from a third-party
//! distribution crate can change the bit pattern of a benchmark.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids separating independent uses of one experiment seed.
pub mod streams {
    pub const CHANNELS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const THETA: u64 = 3;
}

/// SplitMix64 finalizer, used to fold several integers into one stream id.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stream id from a tag and a list of indices.
pub fn derive_stream(tag: u64, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(mix64(tag), |acc, &i| mix64(acc ^ mix64(i)))
}

/// Gaussian sampler over a ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw via the Box–Muller transform.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Circularly symmetric complex normal with unit variance: real and
    /// imaginary parts are independent N(0, 1/2).
    pub fn complex_normal(&mut self) -> Complex64 {
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let re = self.standard_normal() * scale;
        let im = self.standard_normal() * scale;
        Complex64::new(re, im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream_is_bit_identical() {
        let mut a = GaussianStream::new(7, 3);
        let mut b = GaussianStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = GaussianStream::new(7, 3);
        let mut b = GaussianStream::new(7, 4);
        let xa: Vec<f64> = (0..8).map(|_| a.uniform()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.uniform()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn standard_normal_moments() {
        let mut g = GaussianStream::new(11, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn derived_streams_differ_by_index() {
        assert_ne!(derive_stream(2, &[0, 1]), derive_stream(2, &[1, 0]));
        assert_eq!(derive_stream(2, &[5, 9]), derive_stream(2, &[5, 9]));
    }
}
