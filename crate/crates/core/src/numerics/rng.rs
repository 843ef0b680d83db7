//! Seeded, splittable randomness.
//!
//! Uniforms come from ChaCha8 (a counter-based generator with 2^64 independent
//! streams per seed); normals from the Box-Muller pair transform. Child streams
//! are derived deterministically, so parallel chains never share noise.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngState {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far on this stream.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Independent child stream identified by `index`. Depends only on this
    /// state's (seed, stream) identity, never on how much has been drawn.
    pub fn child(&self, index: u64) -> RngState {
        let derived = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5851_f42d)));
        RngState::with_stream(derived, index)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`, safe for `ln`.
    fn uniform_open_low(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `[low, high]` (inclusive).
    pub fn int_inclusive(&mut self, low: usize, high: usize) -> usize {
        debug_assert!(low <= high);
        let span = (high - low + 1) as u64;
        // Rejection sampling keeps the draw exactly uniform.
        let zone = u64::MAX - (u64::MAX % span);
        loop {
            let x = self.inner.next_u64();
            if x < zone {
                return low + (x % span) as usize;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.int_inclusive(0, i);
            items.swap(i, j);
        }
    }

    /// `amount` distinct indices from `0..len`, uniformly, in random order.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        debug_assert!(amount <= len);
        let mut pool: Vec<usize> = (0..len).collect();
        // Partial Fisher-Yates: the first `amount` slots end up a uniform sample.
        for i in 0..amount {
            let j = self.int_inclusive(i, len - 1);
            pool.swap(i, j);
        }
        pool.truncate(amount);
        pool
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// `d` independent standard-normal draws.
pub fn standard_normal_vector(rng: &mut RngState, d: usize) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::Dimension("standard normal vector needs d >= 1".into()));
    }
    Ok((0..d).map(|_| rng.standard_normal()).collect())
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_vectors() {
        let a = standard_normal_vector(&mut RngState::new(17), 32).unwrap();
        let b = standard_normal_vector(&mut RngState::new(17), 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dimension_is_an_error() {
        assert!(standard_normal_vector(&mut RngState::new(1), 0).is_err());
    }

    #[test]
    fn moments_of_many_draws() {
        let mut rng = RngState::new(2024);
        let d = 4;
        let n = 100_000;
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        for _ in 0..n {
            let z = standard_normal_vector(&mut rng, d).unwrap();
            for j in 0..d {
                sum[j] += z[j];
                sum_sq[j] += z[j] * z[j];
            }
        }
        for j in 0..d {
            let mean = sum[j] / n as f64;
            let var = sum_sq[j] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "coordinate {j} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "coordinate {j} variance {var}");
        }
    }

    #[test]
    fn distinct_seeds_differ() {
        for s in 0..100u64 {
            let a = standard_normal_vector(&mut RngState::new(s), 4).unwrap();
            let b = standard_normal_vector(&mut RngState::new(s + 1000), 4).unwrap();
            assert_ne!(a, b);
        }
    }

    #[test]
    fn children_are_independent_of_draw_position() {
        let mut parent = RngState::new(5);
        let before = parent.child(3);
        parent.uniform();
        let after = parent.child(3);
        assert_eq!(before.clone().next_u64(), after.clone().next_u64());
        assert_ne!(parent.child(3).next_u64(), parent.child(4).next_u64());
    }

    #[test]
    fn sample_indices_are_distinct() {
        let mut rng = RngState::new(9);
        for _ in 0..200 {
            let mut idx = rng.sample_indices(10, 7);
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 7);
            assert!(idx.iter().all(|&i| i < 10));
        }
    }
}
