//! Tensor-kernel ridge regression (T-KRR).
//!
//! Supervised learning with deterministic tensor-product Fourier features
//! for the Gaussian kernel. The `M̂^D` weight tensor is never formed: it is
//! kept as a rank-`R` canonical polyadic decomposition and fitted with
//! alternating least squares, one factor matrix at a time.
//!
//! Module map:
//!
//! * [`features`]: one-dimensional Hilbert-space Fourier features, the
//!   induced product kernel, and the random Fourier feature baseline.
//! * [`cpd`]: factor storage and algebra for CPD weights.
//! * [`solver`]: the block coordinate descent trainer.
//! * [`baselines`]: exact Gaussian kernel, dual KRR and primal ridge.
//! * [`data`]: CSV ingestion, input scaling, target standardization, splits.
//! * [`model`]: the train / predict / persist API.
//! * [`synth`]: seeded synthetic datasets used by tests and benchmarks.

pub mod baselines;
pub mod cpd;
pub mod data;
mod error;
pub mod features;
pub mod model;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
