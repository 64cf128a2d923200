//! Reference methods: the exact Gaussian kernel, kernel ridge regression in
//! its dual form, and ridge regression on explicit feature matrices.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cpd::dense_outer;
use crate::features::{feature_matrix, FeatureConfig};
use crate::{Error, Result};

/// Default maximum training set size for [`krr_dual_fit`].
pub const DEFAULT_DUAL_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    lengthscale: f64,
}

impl KernelParams {
    pub fn new(lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        Ok(Self { lengthscale })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }
}

/// `exp(-‖x − x2‖² / (2l²))`.
pub fn gaussian_kernel(x: &[f64], x2: &[f64], params: KernelParams) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: x2.len(),
        });
    }
    let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((-sq / (2.0 * params.lengthscale.powi(2))).exp())
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn cross_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, params: KernelParams) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    let denom = 2.0 * params.lengthscale.powi(2);
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let sq: f64 = (0..a.ncols()).map(|d| (a[(i, d)] - b[(j, d)]).powi(2)).sum();
        (-sq / denom).exp()
    }))
}

pub fn gram_matrix(x: &DMatrix<f64>, params: KernelParams) -> DMatrix<f64> {
    let n = x.nrows();
    let denom = 2.0 * params.lengthscale.powi(2);
    let mut k = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let sq: f64 = (0..x.ncols()).map(|d| (x[(i, d)] - x[(j, d)]).powi(2)).sum();
            let v = (-sq / denom).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Solves `(K + λI) α = y`, Cholesky first and LU as a fallback for
/// semidefinite kernels at `λ = 0`.
pub fn solve_regularized_gram(
    mut k: DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    for i in 0..k.nrows() {
        k[(i, i)] += lambda;
    }
    if let Some(chol) = Cholesky::new(k.clone()) {
        return Ok(chol.solve(y));
    }
    k.lu()
        .solve(y)
        .filter(|a| a.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::NumericalFailure {
            context: "regularized Gram matrix is singular".into(),
            jitter: 0.0,
        })
}

/// Dual kernel ridge regression model.
#[derive(Debug, Clone)]
pub struct KrrDual {
    pub alpha: DVector<f64>,
    pub train_x: DMatrix<f64>,
    pub params: KernelParams,
}

impl KrrDual {
    /// `Σ_n α_n k(x, x_n)` for every row of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(cross_gram(x, &self.train_x, self.params)? * &self.alpha)
    }
}

/// `α = (K + λI)⁻¹ y`. Refuses training sets larger than `cap`.
pub fn krr_dual_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: KernelParams,
    lambda: f64,
    cap: usize,
) -> Result<KrrDual> {
    let n = x.nrows();
    if n > cap {
        return Err(Error::Capacity {
            what: "dual kernel system",
            required: n as u128,
            limit: cap as u128,
        });
    }
    if n == 0 || y.len() != n {
        return Err(Error::ShapeMismatch(format!("{} targets for {n} samples", y.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {lambda}")));
    }
    let alpha = solve_regularized_gram(gram_matrix(x, params), y, lambda)?;
    Ok(KrrDual {
        alpha,
        train_x: x.clone(),
        params,
    })
}

/// Minimizer of `‖y − Φw‖² + λ‖w‖²` via `(ΦᵀΦ + λI) w = Φᵀy`.
pub fn primal_ridge_fit(phi: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if phi.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} feature rows",
            y.len(),
            phi.nrows()
        )));
    }
    if phi.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("features and targets must be finite".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {lambda}")));
    }
    let mut system = phi.tr_mul(phi);
    for i in 0..system.nrows() {
        system[(i, i)] += lambda;
    }
    let chol = Cholesky::new(system).ok_or_else(|| Error::NumericalFailure {
        context: "primal ridge system is not positive definite".into(),
        jitter: 0.0,
    })?;
    Ok(chol.solve(&phi.tr_mul(y)))
}

/// `‖y − Φw‖² + λ‖w‖²`.
pub fn primal_objective(phi: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> f64 {
    (y - phi * w).norm_squared() + lambda * w.norm_squared()
}

/// Rows `vec(z^(1)(x_n1) ∘ … ∘ z^(D)(x_nD))`, column-major like the solver.
/// Fails when `N · M̂^D` exceeds `limit`.
pub fn full_tensor_features(
    x: &DMatrix<f64>,
    cfg: &FeatureConfig,
    limit: usize,
) -> Result<DMatrix<f64>> {
    if x.ncols() != cfg.dims() {
        return Err(Error::DimensionMismatch {
            expected: cfg.dims(),
            found: x.ncols(),
        });
    }
    let width = (cfg.m_hat() as u128).saturating_pow(cfg.dims() as u32);
    let required = width.saturating_mul(x.nrows() as u128);
    if required > limit as u128 {
        return Err(Error::Capacity {
            what: "explicit tensor feature matrix",
            required,
            limit: limit as u128,
        });
    }
    let blocks: Vec<DMatrix<f64>> = (0..cfg.dims())
        .map(|d| feature_matrix(x.column(d).as_slice(), d, cfg))
        .collect::<Result<_>>()?;
    let width = width as usize;
    let mut out = DMatrix::zeros(x.nrows(), width);
    for n in 0..x.nrows() {
        let rows: Vec<Vec<f64>> = blocks.iter().map(|b| b.row(n).iter().copied().collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        for (j, v) in dense_outer(&refs).into_iter().enumerate() {
            out[(n, j)] = v;
        }
    }
    Ok(out)
}
