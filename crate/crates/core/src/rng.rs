//! Seeded random sources for test fixtures, the self-test and the
//! stereogram generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::volume::{CostVolume, FeatureMap};

/// A reproducible ChaCha8 stream.
///
/// `stream` selects an independent sequence for the same seed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        self.inner.gen_range(lo..hi)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f32 {
        self.inner.gen::<f32>()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    pub fn values(&mut self, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    /// Feature map with entries uniform in `[-1, 1)`.
    pub fn feature_map(&mut self, channels: usize, height: usize, width: usize) -> FeatureMap {
        let data = self.values(channels * height * width, -1.0, 1.0);
        FeatureMap::new(channels, height, width, data).expect("finite")
    }

    /// Volume with entries uniform in `[-1, 1)`.
    pub fn volume(&mut self, channels: usize, disparities: usize, height: usize, width: usize) -> CostVolume {
        let data = self.values(channels * disparities * height * width, -1.0, 1.0);
        CostVolume::new(channels, disparities, height, width, data).expect("finite")
    }
}
