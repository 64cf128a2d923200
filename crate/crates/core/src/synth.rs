//! Seeded synthetic datasets.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;

/// Two interleaved crescents with labels `±1` and Gaussian jitter `noise`.
/// Classes alternate, so any prefix is balanced to within one sample.
pub fn banana(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).expect("noise must be finite and non-negative");
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let t = rng.random_range(0.0..PI);
        let (px, py, label) = if i % 2 == 0 {
            (t.cos(), t.sin(), 1.0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), -1.0)
        };
        x[(i, 0)] = px + jitter.sample(&mut rng);
        x[(i, 1)] = py + jitter.sample(&mut rng);
        y[i] = label;
    }
    Dataset::new(x, y, None).expect("generated values are finite")
}

/// Sum of Gaussian bumps on `[0, 1]^dims`.
#[derive(Debug, Clone)]
pub struct BumpField {
    centers: DMatrix<f64>,
    heights: Vec<f64>,
    width: f64,
}

impl BumpField {
    pub fn random(dims: usize, bumps: usize, width: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = DMatrix::from_fn(bumps, dims, |_, _| rng.random_range(0.15..0.85));
        let heights = (0..bumps)
            .map(|k| if k % 2 == 0 { 1.0 } else { -0.7 } * rng.random_range(0.5..1.5))
            .collect();
        Self {
            centers,
            heights,
            width,
        }
    }

    pub fn dims(&self) -> usize {
        self.centers.ncols()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let denom = 2.0 * self.width * self.width;
        self.heights
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let sq: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(d, v)| (v - self.centers[(k, d)]).powi(2))
                    .sum();
                h * (-sq / denom).exp()
            })
            .sum()
    }

    /// `n` uniform samples with additive Gaussian noise.
    pub fn sample(&self, n: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, noise).expect("noise must be finite and non-negative");
        let dims = self.dims();
        let x = DMatrix::from_fn(n, dims, |_, _| rng.random_range(0.0..1.0));
        let y = DVector::from_fn(n, |i, _| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            self.eval(&row) + jitter.sample(&mut rng)
        });
        Dataset::new(x, y, None).expect("generated values are finite")
    }
}

/// Regression benchmark: five bumps of width 0.3 in `dims` dimensions.
pub fn bumps_regression(n: usize, dims: usize, seed: u64) -> Dataset {
    BumpField::random(dims, 5, 0.3, seed).sample(n, 0.05, seed.wrapping_add(1))
}
