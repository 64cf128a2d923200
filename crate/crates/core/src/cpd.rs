//! Weights of a `D`-way tensor stored as a rank-`R` canonical polyadic
//! decomposition: `W = Σ_r w_r^(1) ∘ w_r^(2) ∘ … ∘ w_r^(D)`.
//!
//! Any scaling vector is absorbed into the factors. Dense tensors produced
//! here are vectorized column-major: index `i_1` runs fastest.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Default cap on the number of entries of any dense `M̂^D` object.
pub const DEFAULT_DENSE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CpdWeights {
    factors: Vec<DMatrix<f64>>,
}

impl CpdWeights {
    /// Wraps `D` factor matrices of shape `M̂ × R`.
    pub fn from_factors(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = factors
            .first()
            .ok_or_else(|| Error::ShapeMismatch("a CPD needs at least one factor".into()))?;
        let (m_hat, rank) = first.shape();
        if m_hat == 0 || rank == 0 {
            return Err(Error::ShapeMismatch("factors must be non-empty".into()));
        }
        for (d, f) in factors.iter().enumerate() {
            if f.shape() != (m_hat, rank) {
                return Err(Error::ShapeMismatch(format!(
                    "factor {d} is {:?}, expected {:?}",
                    f.shape(),
                    (m_hat, rank)
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "factor {d} has non-finite entries"
                )));
            }
        }
        Ok(Self { factors })
    }

    /// Standard normal factors, each divided by its Frobenius norm.
    pub fn init_random(m_hat: usize, dims: usize, rank: usize, seed: u64) -> Result<Self> {
        if m_hat == 0 || dims == 0 || rank == 0 {
            return Err(Error::InvalidParameter(
                "m_hat, dims and rank must all be at least 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = (0..dims)
            .map(|_| {
                let mut f =
                    DMatrix::from_fn(m_hat, rank, |_, _| StandardNormal.sample(&mut rng));
                let norm = f.norm();
                f /= norm;
                f
            })
            .collect();
        Ok(Self { factors })
    }

    pub fn dims(&self) -> usize {
        self.factors.len()
    }

    pub fn m_hat(&self) -> usize {
        self.factors[0].nrows()
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, d: usize) -> &DMatrix<f64> {
        &self.factors[d]
    }

    pub fn into_factors(self) -> Vec<DMatrix<f64>> {
        self.factors
    }

    /// Replaces factor `d`, keeping shapes consistent.
    pub fn set_factor(&mut self, d: usize, factor: DMatrix<f64>) -> Result<()> {
        if factor.shape() != self.factors[d].shape() {
            return Err(Error::ShapeMismatch(format!(
                "replacement factor is {:?}, expected {:?}",
                factor.shape(),
                self.factors[d].shape()
            )));
        }
        self.factors[d] = factor;
        Ok(())
    }

    /// Number of entries `M̂^D` of the represented tensor, saturating.
    pub fn full_len(&self) -> u128 {
        (self.m_hat() as u128).saturating_pow(self.dims() as u32)
    }

    /// Materializes the tensor (column-major) if it has at most `limit`
    /// entries.
    pub fn reconstruct_full(&self, limit: usize) -> Result<Vec<f64>> {
        let len = self.full_len();
        if len > limit as u128 {
            return Err(Error::Capacity {
                what: "dense weight tensor",
                required: len,
                limit: limit as u128,
            });
        }
        let mut out = vec![0.0; len as usize];
        let mut column = Vec::new();
        for r in 0..self.rank() {
            let vectors: Vec<&[f64]> = self
                .factors
                .iter()
                .map(|f| &f.as_slice()[r * f.nrows()..(r + 1) * f.nrows()])
                .collect();
            dense_outer_into(&vectors, &mut column);
            out.iter_mut().zip(&column).for_each(|(o, v)| *o += v);
        }
        Ok(out)
    }

    /// `⟨W, z^(1) ∘ … ∘ z^(D)⟩_F = Σ_r Π_d ⟨z^(d), w_r^(d)⟩`.
    pub fn inner_with_rank1(&self, z_list: &[DVector<f64>]) -> Result<f64> {
        if z_list.len() != self.dims() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature vectors for a {}-way tensor",
                z_list.len(),
                self.dims()
            )));
        }
        let mut prod = DVector::from_element(self.rank(), 1.0);
        for (f, z) in self.factors.iter().zip(z_list) {
            if z.len() != f.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "feature vector of length {}, expected {}",
                    z.len(),
                    f.nrows()
                )));
            }
            prod.component_mul_assign(&f.tr_mul(z));
        }
        Ok(prod.sum())
    }

    /// `W^(d)ᵀ W^(d)` for every `d`.
    pub fn factor_grams(&self) -> Vec<DMatrix<f64>> {
        self.factors.iter().map(|f| f.tr_mul(f)).collect()
    }

    /// `⟨W, W⟩_F = Σ_{r,p} Π_d (W^(d)ᵀ W^(d))[r, p]`.
    pub fn frob_norm_sq(&self) -> f64 {
        frob_norm_sq_from_grams(&self.factor_grams())
    }

    /// Rescales the columns so that `‖w_r^(d)‖` is equal across `d` for every
    /// `r`, leaving the represented tensor unchanged. Columns that vanish in
    /// some factor are zeroed everywhere. Returns the factor applied to each
    /// column, indexed `[d][r]`.
    pub fn equilibrate(&mut self) -> Vec<Vec<f64>> {
        let dims = self.dims();
        let mut scales = vec![vec![1.0; self.rank()]; dims];
        for r in 0..self.rank() {
            let norms: Vec<f64> = self.factors.iter().map(|f| f.column(r).norm()).collect();
            if norms.iter().any(|n| *n == 0.0) {
                for (d, f) in self.factors.iter_mut().enumerate() {
                    f.column_mut(r).fill(0.0);
                    scales[d][r] = 0.0;
                }
                continue;
            }
            let log_mean = norms.iter().map(|n| n.ln()).sum::<f64>() / dims as f64;
            let target = log_mean.exp();
            for (d, (f, n)) in self.factors.iter_mut().zip(&norms).enumerate() {
                scales[d][r] = target / n;
                f.column_mut(r).scale_mut(scales[d][r]);
            }
        }
        scales
    }
}

/// Sums the Hadamard product of all Gram matrices.
pub fn frob_norm_sq_from_grams(grams: &[DMatrix<f64>]) -> f64 {
    let Some(first) = grams.first() else {
        return 0.0;
    };
    let mut acc = first.clone();
    for g in &grams[1..] {
        acc.component_mul_assign(g);
    }
    acc.sum()
}

/// Column-major vectorization of `v_1 ∘ v_2 ∘ … ∘ v_D`, i.e. the Kronecker
/// product `v_D ⊗ … ⊗ v_1`.
pub fn dense_outer(vectors: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::new();
    dense_outer_into(vectors, &mut out);
    out
}

fn dense_outer_into(vectors: &[&[f64]], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    for v in vectors {
        let prev = out.len();
        let mut next = Vec::with_capacity(prev * v.len());
        for &vi in v.iter() {
            next.extend(out.iter().map(|o| o * vi));
        }
        *out = next;
    }
}
