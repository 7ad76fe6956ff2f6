//! Soft-margin kernel SVM trained by sequential minimal optimization.
//!
//! The dual problem `min ½ αᵀQα − eᵀα` subject to `0 ≤ α ≤ C` and
//! `yᵀα = 0`, with `Q_ij = y_i y_j K(x_i, x_j)`, is solved two coordinates at
//! a time. Each step picks the maximal violating pair under the first-order
//! KKT conditions. Kernel rows are computed on demand and kept for the rest
//! of the fit. Samples are the rows of the input matrix.

use std::fmt;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;

/// Curvature used in place of a non-positive `K_ii + K_jj − 2K_ij`.
const TAU: f64 = 1e-12;

/// KKT violation at which [`fit`] stops by default.
pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SvmError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("solver did not reach the KKT tolerance within {iters} iterations")]
    NoConvergence { iters: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {0} is not +1 or -1")]
    InvalidLabel(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Kernel function. `Gaussian` and `Rbf` are the same family written with a
/// width `sigma` or a precision `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `exp(−‖u−v‖² / (2σ²))`
    Gaussian { sigma: f64 },
    /// `exp(−γ‖u−v‖²)`
    Rbf { gamma: f64 },
    /// `(scale·⟨u,v⟩ + coef0)^degree`
    Polynomial { degree: u32, coef0: f64, scale: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), SvmError> {
        let ok = match *self {
            KernelSpec::Gaussian { sigma } => sigma > 0.0 && sigma.is_finite(),
            KernelSpec::Rbf { gamma } => gamma > 0.0 && gamma.is_finite(),
            KernelSpec::Polynomial { degree, coef0, scale } => degree >= 1 && coef0.is_finite() && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SvmError::InvalidParameter(format!("kernel {self}")))
        }
    }

    /// Kernel value for equal-length slices; the length is not checked.
    #[inline]
    fn apply(&self, u: &[f64], v: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => (-sq_dist(u, v) / (2.0 * sigma * sigma)).exp(),
            KernelSpec::Rbf { gamma } => (-gamma * sq_dist(u, v)).exp(),
            KernelSpec::Polynomial { degree, coef0, scale } => {
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                (scale * dot + coef0).powi(degree as i32)
            }
        }
    }

    /// Short name of the kernel family.
    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Polynomial { .. } => "polynomial",
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
            KernelSpec::Rbf { gamma } => write!(f, "rbf(gamma={gamma})"),
            KernelSpec::Polynomial { degree, coef0, scale } => {
                write!(f, "polynomial(degree={degree}, coef0={coef0}, scale={scale})")
            }
        }
    }
}

#[inline]
fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn kernel_eval(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64, SvmError> {
    if u.len() != v.len() {
        return Err(SvmError::DimensionMismatch(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    Ok(spec.apply(u, v))
}

/// Median Euclidean distance over all sample pairs (rows of `x`), the usual
/// reference scale for a Gaussian width. Zero when fewer than two rows.
pub fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut d: Vec<f64> = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// One support vector per row.
    #[serde(with = "codec::matrix")]
    pub support_vectors: DMatrix<f64>,
    /// `α_i y_i` for each support vector.
    #[serde(with = "codec::vector")]
    pub alphas: DVector<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub c: f64,
    /// Final dual objective `eᵀα − ½αᵀQα`.
    pub dual_objective: f64,
    pub iterations: usize,
}

/// Result of a fit with the dual objective after every solver step.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub model: SvmModel,
    /// Full dual solution, one entry per training sample.
    pub alpha: DVector<f64>,
    pub objective: Vec<f64>,
}

/// Trains on the rows of `x` with labels in `{+1, −1}`.
pub fn fit(x: &DMatrix<f64>, labels: &[f64], kernel: KernelSpec, c: f64, tol: f64) -> Result<SvmModel, SvmError> {
    Solver::new(x, labels, kernel, c, tol)?.run(false).map(|t| t.model)
}

/// Like [`fit`], also returning the dual variables and objective trace.
pub fn fit_traced(x: &DMatrix<f64>, labels: &[f64], kernel: KernelSpec, c: f64, tol: f64) -> Result<FitTrace, SvmError> {
    Solver::new(x, labels, kernel, c, tol)?.run(true)
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    fn decision_row(&self, row: &[f64]) -> f64 {
        let mut sv = vec![0.0; self.dim()];
        let mut sum = self.bias;
        for (i, coef) in self.alphas.iter().enumerate() {
            for (k, s) in sv.iter_mut().enumerate() {
                *s = self.support_vectors[(i, k)];
            }
            sum += coef * self.kernel.apply(&sv, row);
        }
        sum
    }

    /// Decision values for the rows of `x`.
    pub fn decision_function(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, SvmError> {
        if x.ncols() != self.dim() {
            return Err(SvmError::DimensionMismatch(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut row = vec![0.0; x.ncols()];
        let values = x
            .row_iter()
            .map(|r| {
                row.iter_mut().zip(r.iter()).for_each(|(d, s)| *d = *s);
                self.decision_row(&row)
            })
            .collect::<Vec<_>>();
        Ok(DVector::from_vec(values))
    }

    /// Predicted labels and decision values. A decision value of exactly
    /// zero is assigned to `+1`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, DVector<f64>), SvmError> {
        let values = self.decision_function(x)?;
        let labels = values.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
        Ok((labels, values))
    }
}

struct Solver<'a> {
    /// Samples as contiguous rows.
    rows: Vec<Vec<f64>>,
    y: &'a [f64],
    kernel: KernelSpec,
    c: f64,
    tol: f64,
    diag: Vec<f64>,
    cache: Vec<Option<Vec<f64>>>,
}

impl<'a> Solver<'a> {
    fn new(x: &DMatrix<f64>, y: &'a [f64], kernel: KernelSpec, c: f64, tol: f64) -> Result<Self, SvmError> {
        kernel.validate()?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(SvmError::InvalidParameter(format!("C must be positive, got {c}")));
        }
        if !(tol > 0.0) {
            return Err(SvmError::InvalidParameter(format!("tolerance must be positive, got {tol}")));
        }
        if x.nrows() != y.len() {
            return Err(SvmError::DimensionMismatch(format!("{} samples but {} labels", x.nrows(), y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(SvmError::InvalidLabel(bad));
        }
        if !(y.contains(&1.0) && y.contains(&-1.0)) {
            return Err(SvmError::SingleClass);
        }
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
        let diag = rows.iter().map(|r| kernel.apply(r, r)).collect();
        Ok(Self {
            cache: vec![None; rows.len()],
            rows,
            y,
            kernel,
            c,
            tol,
            diag,
        })
    }

    /// Row `i` of `Q`, computed once.
    fn q_row(&mut self, i: usize) -> &[f64] {
        if self.cache[i].is_none() {
            let yi = self.y[i];
            let ri = &self.rows[i];
            let row = self
                .rows
                .iter()
                .zip(self.y)
                .map(|(rj, yj)| yi * yj * self.kernel.apply(ri, rj))
                .collect();
            self.cache[i] = Some(row);
        }
        self.cache[i].as_deref().expect("row cached above")
    }

    fn in_up(&self, alpha: f64, y: f64) -> bool {
        (y > 0.0 && alpha < self.c) || (y < 0.0 && alpha > 0.0)
    }

    fn in_low(&self, alpha: f64, y: f64) -> bool {
        (y > 0.0 && alpha > 0.0) || (y < 0.0 && alpha < self.c)
    }

    /// Maximal violating pair and the violation `m − M`.
    fn select(&self, alpha: &[f64], grad: &[f64]) -> Option<(usize, usize, f64)> {
        let mut up = (f64::NEG_INFINITY, usize::MAX);
        let mut low = (f64::INFINITY, usize::MAX);
        for t in 0..alpha.len() {
            let v = -self.y[t] * grad[t];
            if self.in_up(alpha[t], self.y[t]) && v > up.0 {
                up = (v, t);
            }
            if self.in_low(alpha[t], self.y[t]) && v < low.0 {
                low = (v, t);
            }
        }
        (up.1 != usize::MAX && low.1 != usize::MAX).then(|| (up.1, low.1, up.0 - low.0))
    }

    fn run(mut self, trace: bool) -> Result<FitTrace, SvmError> {
        let n = self.rows.len();
        let max_iters = (100 * n).max(100_000);
        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let mut objective = Vec::new();
        let mut iters = 0;
        loop {
            let Some((i, j, gap)) = self.select(&alpha, &grad) else { break };
            if gap < self.tol {
                break;
            }
            if iters == max_iters {
                return Err(SvmError::NoConvergence { iters });
            }
            iters += 1;
            let (old_i, old_j) = (alpha[i], alpha[j]);
            self.step(i, j, &mut alpha, &grad);
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            let qi = self.q_row(i).to_vec();
            let qj = self.q_row(j);
            for t in 0..n {
                grad[t] += qi[t] * di + qj[t] * dj;
            }
            if trace {
                objective.push(dual_objective(&alpha, &grad));
            }
        }
        let bias = -self.rho(&alpha, &grad);
        let support: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
        let dim = self.rows.first().map_or(0, Vec::len);
        let mut sv = DMatrix::zeros(support.len(), dim);
        for (r, &t) in support.iter().enumerate() {
            sv.set_row(r, &RowDVector::from_row_slice(&self.rows[t]));
        }
        let model = SvmModel {
            support_vectors: sv,
            alphas: DVector::from_iterator(support.len(), support.iter().map(|&t| alpha[t] * self.y[t])),
            bias,
            kernel: self.kernel,
            c: self.c,
            dual_objective: dual_objective(&alpha, &grad),
            iterations: iters,
        };
        Ok(FitTrace {
            model,
            alpha: DVector::from_vec(alpha),
            objective,
        })
    }

    /// Analytic two-variable update, clipped to the box.
    fn step(&mut self, i: usize, j: usize, alpha: &mut [f64], grad: &[f64]) {
        let c = self.c;
        let q_ij = self.q_row(i)[j];
        let (ai, aj) = (alpha[i], alpha[j]);
        let (mut ni, mut nj);
        if self.y[i] != self.y[j] {
            let quad = positive(self.diag[i] + self.diag[j] + 2.0 * q_ij);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ni = ai + delta;
            nj = aj + delta;
            if diff > 0.0 {
                if nj < 0.0 {
                    nj = 0.0;
                    ni = diff;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = -diff;
            }
            if diff > 0.0 {
                if ni > c {
                    ni = c;
                    nj = c - diff;
                }
            } else if nj > c {
                nj = c;
                ni = c + diff;
            }
        } else {
            let quad = positive(self.diag[i] + self.diag[j] - 2.0 * q_ij);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ni = ai - delta;
            nj = aj + delta;
            if sum > c {
                if ni > c {
                    ni = c;
                    nj = sum - c;
                }
            } else if nj < 0.0 {
                nj = 0.0;
                ni = sum;
            }
            if sum > c {
                if nj > c {
                    nj = c;
                    ni = sum - c;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = sum;
            }
        }
        alpha[i] = ni;
        alpha[j] = nj;
    }

    /// Offset `ρ` with decision `f(x) = Σ α_i y_i K(x_i, x) − ρ`: the mean of
    /// `y_i ∇_i` over free variables, or the midpoint of the feasible range.
    fn rho(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut free_sum = 0.0;
        let mut free = 0usize;
        for t in 0..alpha.len() {
            let yg = self.y[t] * grad[t];
            if alpha[t] >= self.c {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        if free > 0 {
            free_sum / free as f64
        } else {
            0.5 * (ub + lb)
        }
    }
}

fn positive(quad: f64) -> f64 {
    if quad > 0.0 {
        quad
    } else {
        TAU
    }
}

/// `eᵀα − ½αᵀQα` from the gradient `Qα − e`.
fn dual_objective(alpha: &[f64], grad: &[f64]) -> f64 {
    -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>()
}
