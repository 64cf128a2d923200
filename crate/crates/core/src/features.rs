//! Deterministic Fourier features for the Gaussian kernel.
//!
//! Each input dimension `d` is mapped onto `M̂` Laplacian eigenfunctions of
//! the interval `[-U_d, U_d]` with Dirichlet boundary conditions, weighted by
//! the square root of the kernel's spectral density at the eigenfrequency.
//! The full feature of a `D`-dimensional point is the outer product of the
//! per-dimension vectors, so inner products of full features factor into a
//! product of one-dimensional inner products.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Spectral density of the one-dimensional unit-variance Gaussian kernel,
/// `p(ω) = l √(2π) exp(-l² ω² / 2)`.
pub fn spectral_density_gauss(omega: f64, lengthscale: f64) -> Result<f64> {
    if !(lengthscale > 0.0 && lengthscale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lengthscale must be positive and finite, got {lengthscale}"
        )));
    }
    Ok(lengthscale * (2.0 * PI).sqrt() * (-0.5 * (lengthscale * omega).powi(2)).exp())
}

/// Basis size, lengthscale and domain of the deterministic feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    m_hat: usize,
    lengthscale: f64,
    half_widths: Vec<f64>,
}

impl FeatureConfig {
    pub fn new(m_hat: usize, lengthscale: f64, half_widths: Vec<f64>) -> Result<Self> {
        if m_hat == 0 {
            return Err(Error::InvalidParameter("m_hat must be at least 1".into()));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        if half_widths.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one input dimension is required".into(),
            ));
        }
        if let Some(u) = half_widths.iter().find(|u| !(**u > 0.0 && u.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "half widths must be positive and finite, got {u}"
            )));
        }
        Ok(Self {
            m_hat,
            lengthscale,
            half_widths,
        })
    }

    /// Same half width in every one of `dims` dimensions.
    pub fn uniform(m_hat: usize, lengthscale: f64, half_width: f64, dims: usize) -> Result<Self> {
        Self::new(m_hat, lengthscale, vec![half_width; dims])
    }

    pub fn m_hat(&self) -> usize {
        self.m_hat
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    pub fn half_width(&self, d: usize) -> f64 {
        self.half_widths[d]
    }

    pub fn dims(&self) -> usize {
        self.half_widths.len()
    }

    /// Per-basis amplitudes `√(p(ω_i)) / √U` for `i = 1..=M̂`.
    pub fn amplitudes(&self, half_width: f64) -> Vec<f64> {
        let scale = half_width.sqrt().recip();
        (1..=self.m_hat)
            .map(|i| {
                let omega = PI * i as f64 / (2.0 * half_width);
                let density = self.lengthscale
                    * (2.0 * PI).sqrt()
                    * (-0.5 * (self.lengthscale * omega).powi(2)).exp();
                // Underflow can leave tiny negative rounding residue.
                density.max(0.0).sqrt() * scale
            })
            .collect()
    }
}

fn check_domain(x: f64, half_width: f64) -> Result<()> {
    if x.is_finite() && x.abs() <= half_width {
        Ok(())
    } else {
        Err(Error::DomainViolation {
            value: x,
            half_width,
        })
    }
}

fn fill_features(x: f64, half_width: f64, amplitudes: &[f64], out: &mut [f64]) {
    let phase = PI * (x + half_width) / (2.0 * half_width);
    for (i, (slot, amp)) in out.iter_mut().zip(amplitudes).enumerate() {
        *slot = amp * (phase * (i + 1) as f64).sin();
    }
    // sin(kπ) is not exactly zero in floating point.
    if x == -half_width || x == half_width {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Feature vector `z(x)` of length `M̂` for a scalar in `[-U, U]`.
pub fn hilbert_feature(x: f64, half_width: f64, cfg: &FeatureConfig) -> Result<DVector<f64>> {
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "half width must be positive, got {half_width}"
        )));
    }
    check_domain(x, half_width)?;
    let amplitudes = cfg.amplitudes(half_width);
    let mut out = DVector::zeros(cfg.m_hat);
    fill_features(x, half_width, &amplitudes, out.as_mut_slice());
    Ok(out)
}

/// Stacks `hilbert_feature` of every entry of `column` (dimension `d`) into
/// an `N × M̂` matrix.
pub fn feature_matrix(column: &[f64], d: usize, cfg: &FeatureConfig) -> Result<DMatrix<f64>> {
    if d >= cfg.dims() {
        return Err(Error::ShapeMismatch(format!(
            "dimension index {d} out of range for {} dims",
            cfg.dims()
        )));
    }
    let half_width = cfg.half_width(d);
    let amplitudes = cfg.amplitudes(half_width);
    let m_hat = cfg.m_hat;
    let mut out = DMatrix::zeros(column.len(), m_hat);
    let mut row = vec![0.0; m_hat];
    for (n, &x) in column.iter().enumerate() {
        check_domain(x, half_width)?;
        fill_features(x, half_width, &amplitudes, &mut row);
        for (i, v) in row.iter().enumerate() {
            out[(n, i)] = *v;
        }
    }
    Ok(out)
}

/// Writes the features of one sample into `out` (length `M̂`) with
/// precomputed amplitudes. Used by streaming assembly.
pub(crate) fn features_into(
    x: f64,
    half_width: f64,
    amplitudes: &[f64],
    out: &mut [f64],
) -> Result<()> {
    check_domain(x, half_width)?;
    fill_features(x, half_width, amplitudes, out);
    Ok(())
}

/// `⟨Z(x), Z(x2)⟩_F` as a product of `D` one-dimensional inner products.
pub fn product_kernel_approx(x: &[f64], x2: &[f64], cfg: &FeatureConfig) -> Result<f64> {
    if x.len() != cfg.dims() || x2.len() != cfg.dims() {
        return Err(Error::DimensionMismatch {
            expected: cfg.dims(),
            found: if x.len() != cfg.dims() { x.len() } else { x2.len() },
        });
    }
    let mut acc = 1.0;
    for d in 0..cfg.dims() {
        let u = cfg.half_width(d);
        let a = hilbert_feature(x[d], u, cfg)?;
        let b = hilbert_feature(x2[d], u, cfg)?;
        acc *= a.dot(&b);
    }
    Ok(acc)
}

/// Random Fourier feature map `√(2/M) cos(⟨ω_m, x⟩ + b_m)` for the Gaussian
/// kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct RffConfig {
    lengthscale: f64,
    seed: u64,
    /// `M × D`, row `m` is `ω_m`.
    frequencies: DMatrix<f64>,
    phases: DVector<f64>,
}

impl RffConfig {
    /// Draws `m_total` frequencies from `N(0, l⁻² I)` and phases from
    /// `U[0, 2π)`.
    pub fn sample(m_total: usize, dims: usize, lengthscale: f64, seed: u64) -> Result<Self> {
        if m_total == 0 || dims == 0 {
            return Err(Error::InvalidParameter(
                "random feature count and dimension must be positive".into(),
            ));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, lengthscale.recip())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let uniform =
            Uniform::new(0.0, 2.0 * PI).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let frequencies = DMatrix::from_fn(m_total, dims, |_, _| normal.sample(&mut rng));
        let phases = DVector::from_fn(m_total, |_, _| uniform.sample(&mut rng));
        Ok(Self {
            lengthscale,
            seed,
            frequencies,
            phases,
        })
    }

    /// Builds a map from explicit frequencies (`M × D`) and phases.
    pub fn from_parts(
        frequencies: DMatrix<f64>,
        phases: DVector<f64>,
        lengthscale: f64,
    ) -> Result<Self> {
        if frequencies.nrows() != phases.len() || frequencies.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} frequency rows but {} phases",
                frequencies.nrows(),
                phases.len()
            )));
        }
        Ok(Self {
            lengthscale,
            seed: 0,
            frequencies,
            phases,
        })
    }

    pub fn m_total(&self) -> usize {
        self.phases.len()
    }

    pub fn dims(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }
}

pub fn rff_map(x: &[f64], cfg: &RffConfig) -> Result<DVector<f64>> {
    if x.len() != cfg.dims() {
        return Err(Error::DimensionMismatch {
            expected: cfg.dims(),
            found: x.len(),
        });
    }
    let m = cfg.m_total();
    let scale = (2.0 / m as f64).sqrt();
    Ok(DVector::from_fn(m, |k, _| {
        let proj: f64 = (0..x.len()).map(|d| cfg.frequencies[(k, d)] * x[d]).sum();
        scale * (proj + cfg.phases[k]).cos()
    }))
}

/// Applies [`rff_map`] to every row of `x`, giving an `N × M` matrix.
pub fn rff_matrix(x: &DMatrix<f64>, cfg: &RffConfig) -> Result<DMatrix<f64>> {
    if x.ncols() != cfg.dims() {
        return Err(Error::DimensionMismatch {
            expected: cfg.dims(),
            found: x.ncols(),
        });
    }
    let m = cfg.m_total();
    let scale = (2.0 / m as f64).sqrt();
    let mut proj = x * cfg.frequencies.transpose();
    for k in 0..m {
        let b = cfg.phases[k];
        proj.column_mut(k)
            .apply(|v| *v = scale * (*v + b).cos());
    }
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_gauss(a: f64, b: f64, l: f64) -> f64 {
        (-(a - b).powi(2) / (2.0 * l * l)).exp()
    }

    #[test]
    fn spectral_density_values() {
        let s2pi = (2.0 * PI).sqrt();
        assert!((spectral_density_gauss(0.0, 1.0).unwrap() - s2pi).abs() < 1e-15);
        assert!((spectral_density_gauss(0.0, 2.0).unwrap() - 2.0 * s2pi).abs() < 1e-14);
        let expected = s2pi * (-0.5f64).exp();
        assert!((spectral_density_gauss(1.0, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 1.52035).abs() < 1e-5);
        assert_eq!(
            spectral_density_gauss(0.7, 0.4).unwrap(),
            spectral_density_gauss(-0.7, 0.4).unwrap()
        );
    }

    #[test]
    fn spectral_density_rejects_bad_lengthscale() {
        assert!(matches!(
            spectral_density_gauss(0.0, 0.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(spectral_density_gauss(0.0, -1.0).is_err());
    }

    #[test]
    fn boundary_points_give_zero_features() {
        for &(m, l, u) in &[(1, 0.1, 0.5), (7, 1.0, 1.0), (40, 0.05, 3.0)] {
            let cfg = FeatureConfig::uniform(m, l, u, 1).unwrap();
            assert!(hilbert_feature(-u, u, &cfg).unwrap().iter().all(|v| *v == 0.0));
            assert!(hilbert_feature(u, u, &cfg).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn hilbert_feature_at_center() {
        let cfg = FeatureConfig::uniform(2, 1.0, 1.0, 1).unwrap();
        let z = hilbert_feature(0.0, 1.0, &cfg).unwrap();
        // i = 1: sin(π/2) = 1, amplitude √(√(2π) e^{-π²/8}); i = 2: sin(π) = 0.
        let expected = ((2.0 * PI).sqrt() * (-PI * PI / 8.0).exp()).sqrt();
        assert!((z[0] - expected).abs() < 1e-15);
        assert!((z[0] - 0.854378).abs() < 1e-6);
        assert!(z[1].abs() < 1e-15);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let cfg = FeatureConfig::uniform(3, 0.5, 1.0, 1).unwrap();
        assert!(matches!(
            hilbert_feature(1.0 + 1e-9, 1.0, &cfg),
            Err(Error::DomainViolation { .. })
        ));
        assert!(hilbert_feature(f64::NAN, 1.0, &cfg).is_err());
        assert!(feature_matrix(&[0.0, -2.0], 0, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FeatureConfig::new(0, 1.0, vec![1.0]).is_err());
        assert!(FeatureConfig::new(3, 0.0, vec![1.0]).is_err());
        assert!(FeatureConfig::new(3, 1.0, vec![1.0, -0.5]).is_err());
        assert!(FeatureConfig::new(3, 1.0, vec![]).is_err());
    }

    #[test]
    fn feature_matrix_rows_match_single_calls() {
        let cfg = FeatureConfig::new(6, 0.3, vec![0.625, 1.0]).unwrap();
        let column: Vec<f64> = (0..17).map(|k| -0.9 + 0.11 * k as f64).collect();
        let mat = feature_matrix(&column, 1, &cfg).unwrap();
        assert_eq!(mat.shape(), (17, 6));
        for (n, &x) in column.iter().enumerate() {
            let z = hilbert_feature(x, 1.0, &cfg).unwrap();
            for i in 0..6 {
                assert_eq!(mat[(n, i)], z[i]);
            }
        }
        let single = feature_matrix(&[0.2], 0, &cfg).unwrap();
        assert_eq!(single.row(0).transpose(), hilbert_feature(0.2, 0.625, &cfg).unwrap());
        let edge = feature_matrix(&[-0.625; 4], 0, &cfg).unwrap();
        assert!(edge.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn product_kernel_matches_dense_outer_product() {
        let cfg = FeatureConfig::new(4, 0.4, vec![1.0, 0.8, 1.2]).unwrap();
        let x = [0.3, -0.5, 0.9];
        let x2 = [-0.1, 0.2, -1.0];
        // Brute force: materialize both 64-entry tensors.
        let za: Vec<_> = (0..3).map(|d| hilbert_feature(x[d], cfg.half_width(d), &cfg).unwrap()).collect();
        let zb: Vec<_> = (0..3).map(|d| hilbert_feature(x2[d], cfg.half_width(d), &cfg).unwrap()).collect();
        let mut dense = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    dense += za[0][i] * za[1][j] * za[2][k] * zb[0][i] * zb[1][j] * zb[2][k];
                }
            }
        }
        let fast = product_kernel_approx(&x, &x2, &cfg).unwrap();
        assert!((fast - dense).abs() < 1e-12);

        let corner = [-1.0, -0.8, -1.2];
        assert_eq!(product_kernel_approx(&corner, &corner, &cfg).unwrap(), 0.0);

        let one = FeatureConfig::uniform(5, 0.3, 1.0, 1).unwrap();
        let direct = hilbert_feature(0.1, 1.0, &one)
            .unwrap()
            .dot(&hilbert_feature(-0.4, 1.0, &one).unwrap());
        assert_eq!(product_kernel_approx(&[0.1], &[-0.4], &one).unwrap(), direct);
    }

    /// Limit of the Dirichlet eigen-expansion as `M̂ → ∞`, by the method of
    /// images: `Σ_k k(x - x' + 4kU) - k(x + x' + 2U + 4kU)`.
    fn dirichlet_limit(a: f64, b: f64, l: f64, u: f64) -> f64 {
        (-6i32..=6)
            .map(|k| {
                let s = 4.0 * u * k as f64;
                let g = |t: f64| (-t * t / (2.0 * l * l)).exp();
                g(a - b + s) - g(a + b + 2.0 * u + s)
            })
            .sum()
    }

    fn sup_error(m_hat: usize, l: f64, u: f64, grid: usize) -> (f64, f64) {
        let cfg = FeatureConfig::uniform(m_hat, l, u, 1).unwrap();
        let pts: Vec<f64> = (0..grid)
            .map(|k| -0.5 + k as f64 / (grid - 1) as f64)
            .collect();
        let z = feature_matrix(&pts, 0, &cfg).unwrap();
        let gram = &z * z.transpose();
        let mut worst = 0.0f64;
        let mut worst_limit = 0.0f64;
        for i in 0..grid {
            for j in 0..grid {
                worst = worst.max((gram[(i, j)] - exact_gauss(pts[i], pts[j], l)).abs());
                worst_limit = worst_limit
                    .max((gram[(i, j)] - dirichlet_limit(pts[i], pts[j], l, u)).abs());
            }
        }
        (worst, worst_limit)
    }

    #[test]
    fn kernel_error_is_non_increasing_in_basis_size() {
        let errs: Vec<(f64, f64)> = [4, 8, 16, 32].iter().map(|&m| sup_error(m, 0.3, 1.0, 100)).collect();
        for w in errs.windows(2) {
            assert!(w[1].0 <= w[0].0 + 1e-12, "{errs:?}");
        }
        // At M̂ = 32 the truncation error is gone: the approximation equals
        // its infinite-basis limit, and what remains is the boundary term.
        assert!(errs[3].1 < 1e-10, "{errs:?}");
        let boundary_floor = (0..100)
            .map(|k| -0.5 + k as f64 / 99.0)
            .flat_map(|a| (0..100).map(move |k| (a, -0.5 + k as f64 / 99.0)))
            .map(|(a, b)| (dirichlet_limit(a, b, 0.3, 1.0) - exact_gauss(a, b, 0.3)).abs())
            .fold(0.0f64, f64::max);
        assert!((errs[3].0 - boundary_floor).abs() < 1e-10);
        assert!(errs[3].0 < 4e-3);
    }

    #[test]
    fn rff_trivial_cases() {
        let cfg = RffConfig::from_parts(DMatrix::zeros(1, 3), DVector::zeros(1), 1.0).unwrap();
        let z = rff_map(&[0.3, -1.0, 2.0], &cfg).unwrap();
        assert!((z[0] - 2f64.sqrt()).abs() < 1e-15);

        let mut freq = DMatrix::zeros(1, 2);
        freq[(0, 0)] = 1.0;
        let cfg = RffConfig::from_parts(freq, DVector::from_element(1, PI / 2.0), 1.0).unwrap();
        assert!(rff_map(&[0.0, 0.0], &cfg).unwrap()[0].abs() < 1e-15);
        assert!(rff_map(&[0.0], &cfg).is_err());
    }

    #[test]
    fn rff_is_seeded_and_matrix_matches_rows() {
        let a = RffConfig::sample(32, 3, 0.5, 7).unwrap();
        let b = RffConfig::sample(32, 3, 0.5, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, RffConfig::sample(32, 3, 0.5, 8).unwrap());
        assert!(a.phases().iter().all(|p| (0.0..2.0 * PI).contains(p)));

        let x = DMatrix::from_fn(5, 3, |i, j| 0.1 * i as f64 - 0.2 * j as f64);
        let mat = rff_matrix(&x, &a).unwrap();
        for n in 0..5 {
            let row: Vec<f64> = x.row(n).iter().copied().collect();
            let z = rff_map(&row, &a).unwrap();
            for k in 0..32 {
                assert!((mat[(n, k)] - z[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rff_estimate_is_symmetric() {
        let cfg = RffConfig::sample(64, 2, 0.7, 3).unwrap();
        let a = rff_map(&[0.1, 0.4], &cfg).unwrap();
        let b = rff_map(&[-0.3, 0.2], &cfg).unwrap();
        assert_eq!(a.dot(&b), b.dot(&a));
    }

    #[test]
    fn rff_monte_carlo_average_is_unbiased() {
        let x = [0.2f64, -0.1];
        let x2 = [-0.3, 0.25];
        let l = 0.6;
        let exact = (-((x[0] - x2[0]).powi(2) + (x[1] - x2[1]).powi(2)) / (2.0 * l * l)).exp();
        let trials = 100_000u64;
        let mut acc = 0.0;
        for seed in 0..trials {
            let cfg = RffConfig::sample(1, 2, l, seed).unwrap();
            acc += rff_map(&x, &cfg).unwrap().dot(&rff_map(&x2, &cfg).unwrap());
        }
        let estimate = acc / trials as f64;
        assert!((estimate - exact).abs() < 0.01, "{estimate} vs {exact}");
    }
}
