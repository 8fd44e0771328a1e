//! Seeded random streams. Everything that draws randomness goes
//! through [`SeedRng`] so runs are reproducible bit-for-bit.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// Deterministic random source (ChaCha8 keyed by a u64 seed).
pub struct SeedRng {
    inner: ChaCha8Rng,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from the same seed; `stream` selects
    /// the substream (e.g. one per sample or per worker).
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeedRng { inner }
    }

    pub fn normal(&mut self) -> f32 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        self.inner.gen_range(lo..hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), self.normal_vec(n)).expect("shape/data agree")
    }

    /// Gaussian tensor scaled by `sigma`.
    pub fn normal_tensor_scaled(&mut self, shape: &[usize], sigma: f32) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.normal() * sigma).collect();
        Tensor::new(shape.to_vec(), data).expect("shape/data agree")
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f32, hi: f32) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.uniform(lo, hi)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape/data agree")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<f32> = SeedRng::new(42).normal_vec(16);
        let b: Vec<f32> = SeedRng::new(42).normal_vec(16);
        assert_eq!(a, b);
    }

    #[test]
    fn substreams_differ() {
        let a = SeedRng::substream(42, 0).normal_vec(8);
        let b = SeedRng::substream(42, 1).normal_vec(8);
        assert_ne!(a, b);
    }
}
