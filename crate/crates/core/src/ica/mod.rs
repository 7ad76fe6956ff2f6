//! Independent component analysis by mutual-information minimization.
//!
//! The cost of a demixing matrix `W` on observations `X` (one sample per
//! column) is
//!
//! ```text
//! J(W) = Σ_n H(w_n · X) − ln|det W| + λ Σ_n Σ_v sqrt((w_n · x_v)^2 + ε)
//! ```
//!
//! where `H` is the bound-minimization entropy estimate of [`entropy`]. The
//! mixture entropy, which does not depend on `W`, is left out. With `λ = 0`
//! this is the plain mutual-information cost; `λ > 0` adds a smoothed `ℓ1`
//! penalty on the source estimates.

mod cost;
pub mod entropy;
mod isi;
mod optim;
pub mod synth;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{ica_cost, ica_gradient};
pub use entropy::{estimate_entropy, EntropyEstimate, MeasuringFunction, GAUSSIAN_ENTROPY};
pub use isi::isi;
pub use optim::{ica_ebm, sparse_ica_ebm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcaError {
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("demixing matrix is singular")]
    SingularW,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("shape mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid ICA configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcaConfig {
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the Frobenius norm of the cost gradient falls below this.
    pub tol: f64,
    /// Sparsity weight; zero selects the plain mutual-information cost.
    pub lambda: f64,
    /// Smoothing of the absolute value, `sqrt(u^2 + smooth_eps)`.
    pub smooth_eps: f64,
    pub restarts: usize,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iters: 500,
            tol: 1e-6,
            lambda: 0.0,
            smooth_eps: 1e-8,
            restarts: 5,
        }
    }
}

impl IcaConfig {
    pub fn validate(&self) -> Result<(), IcaError> {
        let bad = |msg: &str| Err(IcaError::InvalidConfig(msg.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be a finite non-negative number");
        }
        if !(self.smooth_eps > 0.0) {
            return bad("smooth_eps must be positive");
        }
        Ok(())
    }

    /// `true` when the sparsity penalty is active.
    pub fn is_sparse(&self) -> bool {
        self.lambda > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaResult {
    /// Demixing matrix acting on the input observations.
    pub w: DMatrix<f64>,
    /// Source estimates `w * x`.
    pub y: DMatrix<f64>,
    /// Cost after every accepted optimizer step, starting from the initial point.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub iters: usize,
    /// Index of the restart that produced this result.
    pub restart: usize,
}

impl IcaResult {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("cost trace is never empty")
    }
}
