use nalgebra::DMatrix;

use super::entropy::{entropy_and_gradient, entropy_value};
use super::{IcaConfig, IcaError};

/// Pivot ratio below which a demixing matrix is treated as singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// Mutual-information cost of `w` on `x_hat` (`N x V`), with the sparsity
/// penalty weighted by `config.lambda`.
pub fn ica_cost(w: &DMatrix<f64>, x_hat: &DMatrix<f64>, config: &IcaConfig) -> Result<f64, IcaError> {
    let problem = CostFunction::new(x_hat, config.lambda, config.smooth_eps)?;
    problem.value(w)
}

/// Gradient of [`ica_cost`] with respect to `w`.
pub fn ica_gradient(w: &DMatrix<f64>, x_hat: &DMatrix<f64>, config: &IcaConfig) -> Result<DMatrix<f64>, IcaError> {
    let problem = CostFunction::new(x_hat, config.lambda, config.smooth_eps)?;
    Ok(problem.value_and_gradient(w)?.1)
}

/// Cost evaluator over a fixed observation matrix, stored transposed so each
/// source estimate is a contiguous column.
pub(crate) struct CostFunction {
    xt: DMatrix<f64>,
    lambda: f64,
    eps: f64,
}

impl CostFunction {
    pub(crate) fn new(x: &DMatrix<f64>, lambda: f64, eps: f64) -> Result<Self, IcaError> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(IcaError::DimensionMismatch("empty observation matrix".into()));
        }
        Ok(Self {
            xt: x.transpose(),
            lambda,
            eps,
        })
    }

    fn check(&self, w: &DMatrix<f64>) -> Result<(), IcaError> {
        let n = self.xt.ncols();
        if w.shape() != (n, n) {
            return Err(IcaError::DimensionMismatch(format!(
                "demixing matrix is {}x{}, expected {n}x{n}",
                w.nrows(),
                w.ncols()
            )));
        }
        Ok(())
    }

    pub(crate) fn value(&self, w: &DMatrix<f64>) -> Result<f64, IcaError> {
        self.check(w)?;
        let log_det = log_abs_det(w)?;
        let yt = &self.xt * w.transpose();
        let mut scratch = Vec::with_capacity(yt.nrows());
        let mut total = -log_det;
        for col in yt.column_iter() {
            let y = col.as_slice();
            total += entropy_value(y, &mut scratch)?;
            if self.lambda > 0.0 {
                total += self.lambda * y.iter().map(|u| (u * u + self.eps).sqrt()).sum::<f64>();
            }
        }
        Ok(total)
    }

    pub(crate) fn value_and_gradient(&self, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>), IcaError> {
        self.check(w)?;
        let log_det = log_abs_det(w)?;
        let w_inv = w.clone().try_inverse().ok_or(IcaError::SingularW)?;
        let yt = &self.xt * w.transpose();
        let mut phi = DMatrix::zeros(yt.nrows(), yt.ncols());
        let mut scratch = Vec::with_capacity(yt.nrows());
        let mut total = -log_det;
        for (col, mut out) in yt.column_iter().zip(phi.column_iter_mut()) {
            let y = col.as_slice();
            let grad = out.as_mut_slice();
            total += entropy_and_gradient(y, &mut scratch, grad)?;
            if self.lambda > 0.0 {
                total += self.lambda * y.iter().map(|u| (u * u + self.eps).sqrt()).sum::<f64>();
                for (g, u) in grad.iter_mut().zip(y) {
                    *g += self.lambda * u / (u * u + self.eps).sqrt();
                }
            }
        }
        let gradient = phi.tr_mul(&self.xt) - w_inv.transpose();
        Ok((total, gradient))
    }
}

/// `ln|det w|` from the LU pivots; fails when the pivots span more than
/// twelve orders of magnitude.
pub(crate) fn log_abs_det(w: &DMatrix<f64>) -> Result<f64, IcaError> {
    let lu = w.clone().lu();
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.amax();
    let min = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if !max.is_finite() || !(min > SINGULAR_RATIO * max) {
        return Err(IcaError::SingularW);
    }
    Ok(diag.iter().map(|d| d.abs().ln()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ica::GAUSSIAN_ENTROPY;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identity_on_gaussian_rows() {
        let x = gaussian(4, 20_000, 1);
        let cost = ica_cost(&DMatrix::identity(4, 4), &x, &IcaConfig::default()).unwrap();
        assert_abs_diff_eq!(cost, 4.0 * GAUSSIAN_ENTROPY, epsilon = 0.05);
    }

    #[test]
    fn diagonal_scaling_leaves_plain_cost_unchanged() {
        let x = gaussian(3, 400, 2);
        let w = gaussian(3, 3, 3);
        let cfg = IcaConfig::default();
        let base = ica_cost(&w, &x, &cfg).unwrap();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.5, -0.3, 7.0]));
        assert_abs_diff_eq!(ica_cost(&(&d * &w), &x, &cfg).unwrap(), base, epsilon = 1e-9);
    }

    #[test]
    fn cost_is_linear_in_lambda() {
        let x = gaussian(3, 300, 4);
        let w = gaussian(3, 3, 5);
        let at = |lambda: f64| {
            ica_cost(
                &w,
                &x,
                &IcaConfig {
                    lambda,
                    ..IcaConfig::default()
                },
            )
            .unwrap()
        };
        let slope: f64 = (&w * &x).iter().map(|u| (u * u + 1e-8).sqrt()).sum();
        assert_abs_diff_eq!(at(1000.0) - at(0.0), 1000.0 * slope, epsilon = 1e-6 * slope * 1000.0);
        assert!(at(10.0) < at(100.0) && at(100.0) < at(1000.0));
    }

    #[test]
    fn singular_and_misshaped_matrices_are_rejected() {
        let x = gaussian(2, 50, 6);
        let cfg = IcaConfig::default();
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(ica_cost(&singular, &x, &cfg), Err(IcaError::SingularW));
        assert_eq!(ica_gradient(&singular, &x, &cfg), Err(IcaError::SingularW));
        assert!(matches!(ica_cost(&DMatrix::identity(3, 3), &x, &cfg), Err(IcaError::DimensionMismatch(_))));
    }

    #[test]
    fn gradient_is_linear_in_lambda() {
        let x = gaussian(3, 200, 7);
        let w = gaussian(3, 3, 8);
        let at = |lambda: f64| {
            ica_gradient(
                &w,
                &x,
                &IcaConfig {
                    lambda,
                    ..IcaConfig::default()
                },
            )
            .unwrap()
        };
        let (g0, g1, g2) = (at(0.0), at(1.0), at(2.0));
        assert!(((&g2 - &g0) - 2.0 * (&g1 - &g0)).amax() < 1e-9);
    }

    #[test]
    fn log_det_matches_determinant() {
        let w = gaussian(5, 5, 9);
        assert_abs_diff_eq!(log_abs_det(&w).unwrap(), w.determinant().abs().ln(), epsilon = 1e-10);
    }
}
