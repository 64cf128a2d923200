//! Alternating least squares (block coordinate descent) for CPD-constrained
//! kernel ridge regression.
//!
//! With every factor but `W^(d)` held fixed, the model output and the
//! regularizer are linear and quadratic in `vec(W^(d))`:
//!
//! ```text
//! f(x_n)   = ⟨vec(W^(d)), g_n⟩,   g_n[i + r·M̂] = z^(d)(x_nd)[i] · Π_{k≠d} ⟨z^(k)(x_nk), w_r^(k)⟩
//! ⟨W, W⟩_F = vec(W^(d))ᵀ (H^(d) ⊗ I_M̂) vec(W^(d)),   H^(d) = ⊙_{k≠d} W^(k)ᵀ W^(k)
//! ```
//!
//! so each block update is a ridge problem of size `M̂R`, solved through its
//! normal equations `(Σ g_n g_nᵀ + λ H^(d) ⊗ I) vec(W^(d)) = Σ y_n g_n`.
//! `vec` is column-major throughout (row index `i` fastest).

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cpd::{frob_norm_sq_from_grams, CpdWeights};
use crate::features::{feature_matrix, features_into, FeatureConfig};
use crate::{Error, Result};

/// Rows processed per block when assembling normal equations.
const CHUNK: usize = 512;

/// Largest jitter tried before a factor solve is declared failed.
pub const MAX_JITTER: f64 = 1e-4;

/// Smallest non-zero jitter used when escalation starts from zero.
const MIN_JITTER: f64 = 1e-10;

/// Upper bound on conjugate-gradient steps per block solve.
const REFINEMENT_STEPS: usize = 30;

/// Conjugate gradients stop once the preconditioned residual energy falls
/// below this fraction of `|bᵀx|` and the residual below
/// `RESIDUAL_TOLERANCE · ‖b‖`.
const CG_TOLERANCE: f64 = 1e-15;
const RESIDUAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// Exact regularizer `H^(d) ⊗ I`. Every block update is an exact
    /// minimization, so the objective never increases.
    FullHadamard,
    /// Keep only `diag(H^(d)) ⊗ I`. Cheaper, but the block problem is no
    /// longer the true subproblem.
    #[default]
    DiagonalOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Keep the `N × M̂` feature matrices and `N × R` projections of every
    /// dimension in memory.
    #[default]
    Projections,
    /// Recompute features and projections block by block; memory does not
    /// grow with `N` beyond the input data itself.
    Streaming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub m_hat: usize,
    pub rank: usize,
    pub lambda: f64,
    pub sweeps: usize,
    pub reg_mode: RegMode,
    pub seed: u64,
    pub jitter: f64,
    pub capture_trace: bool,
    #[serde(default)]
    pub cache_mode: CacheMode,
    /// Rebalance column norms across factors after each update. The model is
    /// unchanged, but without it factor scales can drift apart until the
    /// block systems are no longer factorizable.
    #[serde(default = "default_true")]
    pub equilibrate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m_hat: 10,
            rank: 10,
            lambda: 1e-5,
            sweeps: 10,
            reg_mode: RegMode::DiagonalOnly,
            seed: 0,
            jitter: 1e-10,
            capture_trace: true,
            cache_mode: CacheMode::Projections,
            equilibrate: true,
        }
    }
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_hat == 0 || self.rank == 0 {
            return Err(Error::InvalidParameter(
                "m_hat and rank must be at least 1".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidParameter("sweeps must be at least 1".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter <= MAX_JITTER) {
            return Err(Error::InvalidParameter(format!(
                "jitter must lie in [0, {MAX_JITTER}], got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Factor update order for one sweep: `0, 1, …, D-1, D-2, …, 0`.
pub fn sweep_order(dims: usize) -> Vec<usize> {
    (0..dims).chain((0..dims.saturating_sub(1)).rev()).collect()
}

#[derive(Debug, Clone)]
enum FeatureBank {
    Cached(Vec<DMatrix<f64>>),
    Streaming {
        x: DMatrix<f64>,
        amplitudes: Vec<Vec<f64>>,
    },
}

/// Result of one block solve.
#[derive(Debug, Clone)]
pub struct FactorSolve {
    pub factor: DMatrix<f64>,
    /// Jitter that made the system factorizable.
    pub jitter: f64,
    /// `‖M x − b‖ / ‖b‖` after refinement, without the jitter.
    pub relative_residual: f64,
}

/// Solver state: weights plus the caches that keep each update cheap.
#[derive(Debug, Clone)]
pub struct AlsState {
    weights: CpdWeights,
    features: FeatureConfig,
    bank: FeatureBank,
    n_samples: usize,
    /// `projections[d] = feature_matrix(d) · W^(d)`, `N × R`. Empty when
    /// streaming.
    projections: Vec<DMatrix<f64>>,
    grams: Vec<DMatrix<f64>>,
    loss_trace: Vec<f64>,
    sweep_count: usize,
}

impl AlsState {
    /// Builds caches for inputs `x` (`N × D`, already inside the feature
    /// domain) and starting weights.
    pub fn new(
        x: &DMatrix<f64>,
        features: &FeatureConfig,
        weights: CpdWeights,
        cache_mode: CacheMode,
    ) -> Result<Self> {
        let dims = features.dims();
        if x.ncols() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: x.ncols(),
            });
        }
        if weights.dims() != dims || weights.m_hat() != features.m_hat() {
            return Err(Error::ShapeMismatch(format!(
                "weights are {}-way with M̂={}, features are {}-way with M̂={}",
                weights.dims(),
                weights.m_hat(),
                dims,
                features.m_hat()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        let bank = match cache_mode {
            CacheMode::Projections => FeatureBank::Cached(
                (0..dims)
                    .map(|d| feature_matrix(x.column(d).as_slice(), d, features))
                    .collect::<Result<_>>()?,
            ),
            CacheMode::Streaming => {
                for d in 0..dims {
                    let u = features.half_width(d);
                    if let Some(v) = x.column(d).iter().find(|v| !(v.abs() <= u)) {
                        return Err(Error::DomainViolation {
                            value: *v,
                            half_width: u,
                        });
                    }
                }
                FeatureBank::Streaming {
                    x: x.clone(),
                    amplitudes: (0..dims)
                        .map(|d| features.amplitudes(features.half_width(d)))
                        .collect(),
                }
            }
        };
        let mut state = Self {
            grams: weights.factor_grams(),
            weights,
            features: features.clone(),
            bank,
            n_samples: x.nrows(),
            projections: Vec::new(),
            loss_trace: Vec::new(),
            sweep_count: 0,
        };
        if let FeatureBank::Cached(mats) = &state.bank {
            state.projections = mats
                .iter()
                .zip(state.weights.factors())
                .map(|(f, w)| f * w)
                .collect();
        }
        Ok(state)
    }

    pub fn weights(&self) -> &CpdWeights {
        &self.weights
    }

    pub fn into_weights(self) -> CpdWeights {
        self.weights
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dims(&self) -> usize {
        self.weights.dims()
    }

    /// Cached `N × R` projections; empty in streaming mode.
    pub fn projections(&self) -> &[DMatrix<f64>] {
        &self.projections
    }

    pub fn grams(&self) -> &[DMatrix<f64>] {
        &self.grams
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn sweep_count(&self) -> usize {
        self.sweep_count
    }

    /// `N × M̂` features of dimension `d` (a copy in cached mode).
    pub fn feature_block(&self, d: usize) -> DMatrix<f64> {
        self.chunk_features(d, 0, self.n_samples)
    }

    fn chunk_features(&self, d: usize, start: usize, len: usize) -> DMatrix<f64> {
        match &self.bank {
            FeatureBank::Cached(mats) => mats[d].rows(start, len).into_owned(),
            FeatureBank::Streaming { x, amplitudes } => {
                let m_hat = self.features.m_hat();
                let u = self.features.half_width(d);
                let mut out = DMatrix::zeros(len, m_hat);
                let mut row = vec![0.0; m_hat];
                for n in 0..len {
                    features_into(x[(start + n, d)], u, &amplitudes[d], &mut row)
                        .expect("inputs were checked against the domain");
                    for (i, v) in row.iter().enumerate() {
                        out[(n, i)] = *v;
                    }
                }
                out
            }
        }
    }

    fn chunk_projection(&self, k: usize, start: usize, len: usize) -> DMatrix<f64> {
        match &self.bank {
            FeatureBank::Cached(_) => self.projections[k].rows(start, len).into_owned(),
            FeatureBank::Streaming { .. } => {
                self.chunk_features(k, start, len) * self.weights.factor(k)
            }
        }
    }

    /// `q[n, r] = Π_{k ∉ skip} projections[k][n, r]` for a block of rows.
    fn chunk_hadamard(&self, skip: Option<usize>, start: usize, len: usize) -> DMatrix<f64> {
        let mut q = DMatrix::from_element(len, self.weights.rank(), 1.0);
        for k in (0..self.dims()).filter(|k| Some(*k) != skip) {
            match &self.bank {
                FeatureBank::Cached(_) => {
                    q.component_mul_assign(&self.projections[k].rows(start, len))
                }
                FeatureBank::Streaming { .. } => {
                    q.component_mul_assign(&self.chunk_projection(k, start, len))
                }
            }
        }
        q
    }

    /// Model outputs `⟨W, Z(x_n)⟩_F` on the training inputs.
    pub fn predictions(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_samples);
        for start in (0..self.n_samples).step_by(CHUNK) {
            let len = CHUNK.min(self.n_samples - start);
            let q = self.chunk_hadamard(None, start, len);
            for n in 0..len {
                out[start + n] = q.row(n).sum();
            }
        }
        out
    }

    /// `Σ_n (y_n − ⟨W, Z(x_n)⟩_F)² + λ ⟨W, W⟩_F`, from the caches alone.
    pub fn objective(&self, y: &DVector<f64>, lambda: f64) -> f64 {
        let fit = self.predictions();
        let data: f64 = y.iter().zip(fit.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        data + lambda * frob_norm_sq_from_grams(&self.grams)
    }

    /// `g^(d)(x_n)` for sample `n`, given its dimension-`d` features `z_nd`.
    pub fn g_row(&self, d: usize, n: usize, z_nd: &[f64]) -> Result<DVector<f64>> {
        let m_hat = self.features.m_hat();
        if z_nd.len() != m_hat || n >= self.n_samples || d >= self.dims() {
            return Err(Error::ShapeMismatch(format!(
                "g row request d={d}, n={n}, |z|={} out of range",
                z_nd.len()
            )));
        }
        let q = self.chunk_hadamard(Some(d), n, 1);
        let rank = self.weights.rank();
        let mut g = DVector::zeros(m_hat * rank);
        for r in 0..rank {
            for i in 0..m_hat {
                g[i + r * m_hat] = z_nd[i] * q[(0, r)];
            }
        }
        Ok(g)
    }

    /// `H^(d)`: Hadamard product of the Gram matrices of every factor but
    /// `d`, or only its diagonal.
    pub fn regularizer(&self, d: usize, reg_mode: RegMode) -> DMatrix<f64> {
        let rank = self.weights.rank();
        let mut h = DMatrix::from_element(rank, rank, 1.0);
        for (k, g) in self.grams.iter().enumerate() {
            if k != d {
                h.component_mul_assign(g);
            }
        }
        match reg_mode {
            RegMode::FullHadamard => h,
            RegMode::DiagonalOnly => DMatrix::from_diagonal(&h.diagonal()),
        }
    }

    /// Assembles `(A + λ H ⊗ I, b)` for block `d`, without jitter.
    pub fn normal_equations(
        &self,
        d: usize,
        y: &DVector<f64>,
        lambda: f64,
        reg_mode: RegMode,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if y.len() != self.n_samples {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {} samples",
                y.len(),
                self.n_samples
            )));
        }
        let m_hat = self.features.m_hat();
        let rank = self.weights.rank();
        let width = m_hat * rank;
        let mut lhs = DMatrix::zeros(width, width);
        let mut rhs = DVector::zeros(width);
        for start in (0..self.n_samples).step_by(CHUNK) {
            let len = CHUNK.min(self.n_samples - start);
            let z = self.chunk_features(d, start, len);
            let q = self.chunk_hadamard(Some(d), start, len);
            // Column n of `gt` is g_n.
            let mut gt = DMatrix::zeros(width, len);
            for n in 0..len {
                let mut col = gt.column_mut(n);
                for r in 0..rank {
                    let qr = q[(n, r)];
                    for i in 0..m_hat {
                        col[i + r * m_hat] = z[(n, i)] * qr;
                    }
                }
            }
            let g = gt.transpose();
            lhs.gemm(1.0, &gt, &g, 1.0);
            rhs.gemv(1.0, &gt, &y.rows(start, len), 1.0);
        }
        if lambda != 0.0 {
            let h = self.regularizer(d, reg_mode);
            for r in 0..rank {
                for p in 0..rank {
                    let v = lambda * h[(r, p)];
                    if v != 0.0 {
                        for i in 0..m_hat {
                            lhs[(i + r * m_hat, i + p * m_hat)] += v;
                        }
                    }
                }
            }
        }
        Ok((lhs, rhs))
    }

    /// `(A + λ H ⊗ I) x − b` for block `d`, evaluated as
    /// `Σ_n g_n (g_nᵀ x − y_n) + λ vec(X H)` without forming `A`. With
    /// `y = None` the `b` term is dropped.
    fn block_apply(
        &self,
        d: usize,
        y: Option<&DVector<f64>>,
        lambda: f64,
        reg_mode: RegMode,
        x: &DVector<f64>,
    ) -> DVector<f64> {
        let m_hat = self.features.m_hat();
        let rank = self.weights.rank();
        let block = DMatrix::from_column_slice(m_hat, rank, x.as_slice());
        let mut out = DMatrix::zeros(m_hat, rank);
        for start in (0..self.n_samples).step_by(CHUNK) {
            let len = CHUNK.min(self.n_samples - start);
            let z = self.chunk_features(d, start, len);
            let mut q = self.chunk_hadamard(Some(d), start, len);
            let p = &z * &block;
            for n in 0..len {
                let fit: f64 = p.row(n).iter().zip(q.row(n).iter()).map(|(a, b)| a * b).sum();
                let e = fit - y.map_or(0.0, |y| y[start + n]);
                q.row_mut(n).scale_mut(e);
            }
            out.gemm_tr(1.0, &z, &q, 1.0);
        }
        if lambda != 0.0 {
            let h = self.regularizer(d, reg_mode);
            out.gemm(lambda, &block, &h, 1.0);
        }
        DVector::from_column_slice(out.as_slice())
    }

    /// `b − (A + λ H ⊗ I) x` for block `d`, computed from the data rather
    /// than from the assembled matrix.
    pub fn block_residual(
        &self,
        d: usize,
        y: &DVector<f64>,
        lambda: f64,
        reg_mode: RegMode,
        x: &DVector<f64>,
    ) -> DVector<f64> {
        -self.block_apply(d, Some(y), lambda, reg_mode, x)
    }

    /// Gradient of the objective with respect to `vec(W^(d))` (column-major).
    pub fn gradient(&self, d: usize, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        if y.len() != self.n_samples {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {} samples",
                y.len(),
                self.n_samples
            )));
        }
        let w = DVector::from_column_slice(self.weights.factor(d).as_slice());
        Ok(self.block_residual(d, y, lambda, RegMode::FullHadamard, &w) * -2.0)
    }

    pub fn solve_factor(
        &self,
        d: usize,
        y: &DVector<f64>,
        lambda: f64,
        reg_mode: RegMode,
        jitter: f64,
    ) -> Result<FactorSolve> {
        let (lhs, rhs) = self.normal_equations(d, y, lambda, reg_mode)?;
        let mut jitter = jitter;
        let chol = loop {
            let mut system = lhs.clone();
            if jitter > 0.0 {
                for k in 0..system.nrows() {
                    system[(k, k)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(system) {
                break chol;
            }
            let next = if jitter == 0.0 {
                MIN_JITTER
            } else {
                jitter * 10.0
            };
            if next > MAX_JITTER * (1.0 + 1e-9) {
                return Err(Error::NumericalFailure {
                    context: format!("normal equations of factor {d} are not positive definite"),
                    jitter,
                });
            }
            jitter = next;
        };
        // The assembled matrix squares the conditioning of the underlying
        // least-squares problem, and the jitter biases its minimizer. Both
        // are removed by conjugate gradients on the exact block system with
        // data-based products, preconditioned by the jittered factor.
        let rhs_norm = rhs.norm();
        let mut x = chol.solve(&rhs);
        let mut r = self.block_residual(d, y, lambda, reg_mode, &x);
        let mut z = chol.solve(&r);
        let mut rz = r.dot(&z);
        let mut p = z.clone();
        for _ in 0..REFINEMENT_STEPS {
            let energy = rhs.dot(&x).abs();
            if !(rz > CG_TOLERANCE * energy || r.norm() > RESIDUAL_TOLERANCE * rhs_norm) {
                break;
            }
            let ap = self.block_apply(d, None, lambda, reg_mode, &p);
            let curvature = p.dot(&ap);
            if !(curvature > 0.0) {
                break;
            }
            let alpha = rz / curvature;
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            z = chol.solve(&r);
            let rz_next = r.dot(&z);
            p = &z + &p * (rz_next / rz);
            rz = rz_next;
        }
        let best = self.block_residual(d, y, lambda, reg_mode, &x).norm();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure {
                context: format!("solution of factor {d} is not finite"),
                jitter,
            });
        }
        let relative_residual = if rhs_norm > 0.0 { best / rhs_norm } else { best };
        let factor = DMatrix::from_column_slice(self.features.m_hat(), self.weights.rank(), x.as_slice());
        Ok(FactorSolve {
            factor,
            jitter,
            relative_residual,
        })
    }

    /// Installs a new factor `d` and refreshes its projection and Gram.
    pub fn update_factor(&mut self, d: usize, factor: DMatrix<f64>) -> Result<()> {
        self.weights.set_factor(d, factor)?;
        self.refresh(d);
        Ok(())
    }

    fn refresh(&mut self, d: usize) {
        let w = self.weights.factor(d);
        self.grams[d] = w.tr_mul(w);
        if let FeatureBank::Cached(mats) = &self.bank {
            self.projections[d] = &mats[d] * w;
        }
    }

    fn rebalance(&mut self) {
        let scales = self.weights.equilibrate();
        for (k, s) in scales.iter().enumerate() {
            self.grams[k] = self.weights.factor(k).tr_mul(self.weights.factor(k));
            if let FeatureBank::Cached(_) = &self.bank {
                for (r, c) in s.iter().enumerate() {
                    self.projections[k].column_mut(r).scale_mut(*c);
                }
            }
        }
    }

    /// One sweep `1 → D → 1`. Appends one objective value per update when
    /// `cfg.capture_trace` is set.
    pub fn sweep(&mut self, y: &DVector<f64>, cfg: &TrainConfig) -> Result<()> {
        for d in sweep_order(self.dims()) {
            let solve = self.solve_factor(d, y, cfg.lambda, cfg.reg_mode, cfg.jitter)?;
            self.update_factor(d, solve.factor)?;
            if cfg.equilibrate {
                self.rebalance();
            }
            if cfg.capture_trace {
                self.loss_trace.push(self.objective(y, cfg.lambda));
            }
        }
        self.sweep_count += 1;
        Ok(())
    }
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: CpdWeights,
    /// Objective after every factor update (empty unless tracing).
    pub loss_trace: Vec<f64>,
    /// Objective at the random initialization.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Runs `cfg.sweeps` sweeps from a seeded random initialization.
///
/// `x` must already be scaled into the feature domain and `y` standardized
/// (regression) or in `{-1, +1}` (classification).
pub fn train(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    features: &FeatureConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    if y.len() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} samples",
            y.len(),
            x.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("targets must be finite".into()));
    }
    if cfg.m_hat != features.m_hat() {
        return Err(Error::InvalidParameter(format!(
            "train config has m_hat={} but features use {}",
            cfg.m_hat,
            features.m_hat()
        )));
    }
    let weights = CpdWeights::init_random(cfg.m_hat, features.dims(), cfg.rank, cfg.seed)?;
    let mut state = AlsState::new(x, features, weights, cfg.cache_mode)?;
    let initial_loss = state.objective(y, cfg.lambda);
    for _ in 0..cfg.sweeps {
        state.sweep(y, cfg)?;
    }
    let final_loss = match state.loss_trace.last() {
        Some(v) => *v,
        None => state.objective(y, cfg.lambda),
    };
    Ok(TrainOutcome {
        loss_trace: std::mem::take(&mut state.loss_trace),
        weights: state.into_weights(),
        initial_loss,
        final_loss,
    })
}
