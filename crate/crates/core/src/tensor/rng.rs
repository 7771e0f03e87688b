//! Seeded random generation.
//!
//! The bit stream is ChaCha8 seeded through `SeedableRng::seed_from_u64`,
//! which rand_chacha documents as value-stable. Floats are derived here
//! rather than through `rand` distributions so that no upstream sampling
//! change can move a fixture:
//!
//! * uniform `[0, 1)`: top 53 bits of a `u64`, times `2⁻⁵³`
//! * uniform `[low, high)`: `low + (high − low)·u`
//! * normal: Box–Muller on `(1 − u₁, u₂)`, cosine branch only, one
//!   normal per pair of draws

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std_dev: f64 },
}

impl Distribution {
    pub const UNIT: Distribution = Distribution::Uniform { low: 0.0, high: 1.0 };

    pub fn symmetric(bound: f64) -> Self {
        Distribution::Uniform {
            low: -bound,
            high: bound,
        }
    }

    pub fn standard_normal() -> Self {
        Distribution::Normal {
            mean: 0.0,
            std_dev: 1.0,
        }
    }
}

/// Instance-owned deterministic generator.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn sample(&mut self, dist: Distribution) -> f64 {
        match dist {
            Distribution::Uniform { low, high } => low + (high - low) * self.next_unit(),
            Distribution::Normal { mean, std_dev } => {
                let u1 = 1.0 - self.next_unit();
                let u2 = self.next_unit();
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                mean + std_dev * z
            }
        }
    }

    pub fn matrix<T: Real>(&mut self, rows: usize, cols: usize, dist: Distribution) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |_, _| T::from_f64_lossy(self.sample(dist)))
    }
}

/// Deterministic for fixed `(rows, cols, seed, dist)`.
pub fn random_matrix<T: Real>(rows: usize, cols: usize, seed: u64, dist: Distribution) -> Matrix<T> {
    SeededRng::new(seed).matrix(rows, cols, dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_matrix() {
        let a = random_matrix::<f64>(4, 5, 9, Distribution::standard_normal());
        let b = random_matrix::<f64>(4, 5, 9, Distribution::standard_normal());
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = random_matrix::<f64>(4, 4, 1, Distribution::UNIT);
        let b = random_matrix::<f64>(4, 4, 2, Distribution::UNIT);
        assert_ne!(a, b);
    }

    #[test]
    fn unit_range() {
        let a = random_matrix::<f64>(4, 4, 42, Distribution::UNIT);
        assert!(a.data().iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn stream_is_pinned() {
        // Guards the documented generator against silent upstream changes.
        let mut rng = SeededRng::new(42);
        let first: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        let mut again = SeededRng::new(42);
        assert_eq!(first, (0..3).map(|_| again.next_u64()).collect::<Vec<_>>());
        assert_eq!(first, PINNED_SEED_42);
    }

    const PINNED_SEED_42: [u64; 3] = [
        12578764544318200737,
        17529487244874322312,
        7886285670807131020,
    ];

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = SeededRng::new(7);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.sample(Distribution::standard_normal())).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
