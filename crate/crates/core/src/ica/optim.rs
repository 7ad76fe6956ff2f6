use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::cost::CostFunction;
use super::entropy::MIN_SAMPLES;
use super::{IcaConfig, IcaError, IcaResult};

/// Correction pairs kept by the quasi-Newton update.
const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimizes the plain mutual-information cost. `config.lambda` is ignored.
pub fn ica_ebm(x_hat: &DMatrix<f64>, config: &IcaConfig) -> Result<IcaResult, IcaError> {
    optimize(x_hat, config, 0.0)
}

/// Minimizes the mutual-information cost with the `ℓ1` penalty weighted by
/// `config.lambda`. Identical to [`ica_ebm`] when `lambda` is zero.
pub fn sparse_ica_ebm(x_hat: &DMatrix<f64>, config: &IcaConfig) -> Result<IcaResult, IcaError> {
    optimize(x_hat, config, config.lambda)
}

/// Second-moment whitener `K = D^{-1/2} E^T` and its inverse transpose.
struct Whitener {
    k: DMatrix<f64>,
    k_inv_t: DMatrix<f64>,
    log_det: f64,
}

impl Whitener {
    fn fit(x: &DMatrix<f64>) -> Result<Self, IcaError> {
        let cov = x * x.transpose() / x.ncols() as f64;
        let eig = SymmetricEigen::new(cov);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(max > 0.0) || !(min > 1e-12 * max) {
            return Err(IcaError::DegenerateInput(format!(
                "observation covariance is rank-deficient (eigenvalues {min:e}..{max:e})"
            )));
        }
        let n = x.nrows();
        let mut k = eig.eigenvectors.transpose();
        let mut k_inv_t = eig.eigenvectors.transpose();
        for i in 0..n {
            let d = eig.eigenvalues[i].sqrt();
            k.row_mut(i).unscale_mut(d);
            k_inv_t.row_mut(i).scale_mut(d);
        }
        let log_det = -0.5 * eig.eigenvalues.iter().map(|l| l.ln()).sum::<f64>();
        Ok(Self { k, k_inv_t, log_det })
    }
}

struct RestartOutcome {
    b: DMatrix<f64>,
    trace: Vec<f64>,
    converged: bool,
    iters: usize,
}

fn optimize(x: &DMatrix<f64>, config: &IcaConfig, lambda: f64) -> Result<IcaResult, IcaError> {
    config.validate()?;
    let (n, v) = x.shape();
    if n == 0 {
        return Err(IcaError::DegenerateInput("no components".into()));
    }
    if n > v || v < MIN_SAMPLES {
        return Err(IcaError::DegenerateInput(format!("{n} components from {v} samples")));
    }
    let whitener = Whitener::fit(x)?;
    let z = &whitener.k * x;
    let cost = CostFunction::new(&z, lambda, config.smooth_eps)?;

    let outcomes: Vec<Result<RestartOutcome, IcaError>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let b0 = random_orthogonal(n, restart_seed(config.seed, r));
            minimize(&cost, b0, &whitener.k_inv_t, config)
        })
        .collect();

    let mut best: Option<(usize, RestartOutcome)> = None;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        let better = match &best {
            None => true,
            Some((_, b)) => last(&outcome.trace) < last(&b.trace),
        };
        if better {
            best = Some((r, outcome));
        }
    }
    let (restart, outcome) = best.expect("at least one restart");
    let w = &outcome.b * &whitener.k;
    let y = &w * x;
    Ok(IcaResult {
        w,
        y,
        // cost on the whitened data differs from the cost on `x` by ln|det K|
        cost_trace: outcome.trace.iter().map(|c| c - whitener.log_det).collect(),
        converged: outcome.converged,
        iters: outcome.iters,
        restart,
    })
}

fn last(trace: &[f64]) -> f64 {
    trace[trace.len() - 1]
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Rows of `v` scaled to unit norm, with the norms.
fn normalize_rows(v: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut b = v.clone();
    let norms: Vec<f64> = b
        .row_iter_mut()
        .map(|mut r| {
            let n = r.norm();
            r.unscale_mut(n);
            n
        })
        .collect();
    (b, norms)
}

/// The cost restricted to unit-norm rows in whitened coordinates, as in
/// decoupled row-wise ICA. Without the penalty the cost is invariant to row
/// scaling, so the restriction changes nothing; with it, the penalty cannot
/// be traded against a shrinking scale.
struct SphereCost<'a> {
    cost: &'a CostFunction,
}

struct Evaluated {
    f: f64,
    /// Gradient with respect to the unnormalized parameters.
    grad: DMatrix<f64>,
    /// Gradient at the normalized point, projected onto the row tangents.
    tangent: DMatrix<f64>,
}

impl SphereCost<'_> {
    fn value(&self, v: &DMatrix<f64>) -> Result<f64, IcaError> {
        self.cost.value(&normalize_rows(v).0)
    }

    fn evaluate(&self, v: &DMatrix<f64>) -> Result<Evaluated, IcaError> {
        let (b, norms) = normalize_rows(v);
        let (f, g) = self.cost.value_and_gradient(&b)?;
        let mut tangent = g;
        for (n, mut row) in tangent.row_iter_mut().enumerate() {
            let along = row.dot(&b.row(n));
            row -= along * b.row(n);
        }
        let mut grad = tangent.clone();
        for (mut row, norm) in grad.row_iter_mut().zip(&norms) {
            row.unscale_mut(*norm);
        }
        Ok(Evaluated { f, grad, tangent })
    }
}

/// Limited-memory BFGS with Armijo backtracking on the whitened problem.
/// Convergence is measured on the projected gradient with respect to the
/// unwhitened demixing matrix, `grad_B * K^{-T}`.
fn minimize(cost: &CostFunction, b0: DMatrix<f64>, k_inv_t: &DMatrix<f64>, config: &IcaConfig) -> Result<RestartOutcome, IcaError> {
    let sphere = SphereCost { cost };
    let mut v = b0;
    let mut cur = sphere.evaluate(&v)?;
    let mut trace = vec![cur.f];
    let mut memory: VecDeque<(DMatrix<f64>, DMatrix<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut converged = false;
    let mut iters = 0;

    while iters < config.max_iters {
        if (&cur.tangent * k_inv_t).norm() < config.tol {
            converged = true;
            break;
        }
        let g = &cur.grad;
        let mut dir = two_loop(g, &memory);
        let mut slope = dir.dot(g);
        if !(slope < 0.0) {
            memory.clear();
            dir = -g;
            slope = -g.norm_squared();
        }
        let mut t = if memory.is_empty() { (1.0 / g.norm()).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &v + t * &dir;
            if let Ok(ft) = sphere.value(&trial) {
                if ft <= cur.f + ARMIJO * t * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };
        let new = sphere.evaluate(&next)?;
        let s = &next - &v;
        let y = &new.grad - &cur.grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        v = next;
        cur = new;
        trace.push(cur.f);
        iters += 1;
    }
    if !converged && (&cur.tangent * k_inv_t).norm() < config.tol {
        converged = true;
    }
    Ok(RestartOutcome {
        b: normalize_rows(&v).0,
        trace,
        converged,
        iters,
    })
}

fn two_loop(g: &DMatrix<f64>, memory: &VecDeque<(DMatrix<f64>, DMatrix<f64>, f64)>) -> DMatrix<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * s.dot(&q);
        q -= a * y;
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * y.dot(&q);
        q += (a - beta) * s;
    }
    -q
}
