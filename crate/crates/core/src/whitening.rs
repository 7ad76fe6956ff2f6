//! Feature centering and PCA projection onto the leading eigenvector subspace.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row means below this magnitude count as centered.
pub const CENTERING_TOL: f64 = 1e-10;

/// Eigenvalues below `RANK_TOL * largest` are treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PcaError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("order {order} exceeds the rank bound {bound}")]
    OrderTooLarge { order: usize, bound: usize },
    #[error("order must be at least 1")]
    ZeroOrder,
    #[error("input is not centered (row {row} has mean {mean:e})")]
    NotCentered { row: usize, mean: f64 },
    #[error("data has rank {rank}, below the requested order {order}")]
    RankDeficient { rank: usize, order: usize },
    #[error("expected {expected} rows, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Per-feature mean over the training columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringStats {
    #[serde(with = "crate::codec::vector")]
    pub mean: DVector<f64>,
}

impl CenteringStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Subtracts the stored mean from every column of `x`.
    pub fn center(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, PcaError> {
        check_rows(self.dim(), x)?;
        let mut out = x.clone();
        for mut col in out.column_iter_mut() {
            col -= &self.mean;
        }
        Ok(out)
    }
}

pub fn fit_center(x: &DMatrix<f64>) -> Result<CenteringStats, PcaError> {
    if x.ncols() < 2 {
        return Err(PcaError::TooFewSamples(x.ncols()));
    }
    Ok(CenteringStats { mean: row_means(x) })
}

pub(crate) fn row_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.ncols() as f64;
    DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.sum() / n))
}

/// Leading-eigenvector reduction matrix.
///
/// Rows of `f` are orthonormal eigenvectors of the training covariance,
/// ordered by non-increasing eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjector {
    #[serde(with = "crate::codec::matrix")]
    pub f: DMatrix<f64>,
    #[serde(with = "crate::codec::vector")]
    pub eigenvalues: DVector<f64>,
}

impl PcaProjector {
    pub fn order(&self) -> usize {
        self.f.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.f.ncols()
    }

    /// Keeps only the leading `order` components.
    pub fn truncate(&self, order: usize) -> Result<PcaProjector, PcaError> {
        if order == 0 {
            return Err(PcaError::ZeroOrder);
        }
        if order > self.order() {
            return Err(PcaError::OrderTooLarge {
                order,
                bound: self.order(),
            });
        }
        Ok(PcaProjector {
            f: self.f.rows(0, order).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, order).into_owned(),
        })
    }
}

/// Fits the top-`order` principal axes of the centered `d x V` matrix `xc`.
///
/// Uses the `V x V` Gram matrix when `V <= d`, otherwise the `d x d`
/// covariance.
pub fn fit_pca(xc: &DMatrix<f64>, order: usize) -> Result<PcaProjector, PcaError> {
    let (d, v) = xc.shape();
    if v < 2 {
        return Err(PcaError::TooFewSamples(v));
    }
    if order == 0 {
        return Err(PcaError::ZeroOrder);
    }
    let bound = d.min(v - 1);
    if order > bound {
        return Err(PcaError::OrderTooLarge { order, bound });
    }
    for (row, r) in xc.row_iter().enumerate() {
        let mean = r.sum() / v as f64;
        if mean.abs() >= CENTERING_TOL {
            return Err(PcaError::NotCentered { row, mean });
        }
    }

    let denom = (v - 1) as f64;
    let (mut f, eigenvalues) = if v <= d {
        let gram = xc.tr_mul(xc) / denom;
        let (vals, vecs) = sorted_eigen(gram);
        check_rank(&vals, order)?;
        let mut f = DMatrix::zeros(order, d);
        for k in 0..order {
            let axis = xc * vecs.column(k) / (denom * vals[k]).sqrt();
            f.row_mut(k).copy_from(&axis.transpose());
        }
        (f, vals.rows(0, order).into_owned())
    } else {
        let cov = xc * xc.transpose() / denom;
        let (vals, vecs) = sorted_eigen(cov);
        check_rank(&vals, order)?;
        let f = vecs.columns(0, order).transpose();
        (f, vals.rows(0, order).into_owned())
    };

    orthonormalize_rows(&mut f);
    for mut row in f.row_iter_mut() {
        let (imax, _) = row.iter().enumerate().fold((0, 0.0f64), |best, (i, &x)| {
            if x.abs() > best.1 {
                (i, x.abs())
            } else {
                best
            }
        });
        if row[imax] < 0.0 {
            row.neg_mut();
        }
    }
    Ok(PcaProjector { f, eigenvalues })
}

/// Eigen-decomposition with eigenvalues sorted in non-increasing order.
fn sorted_eigen(sym: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = DVector::from_iterator(idx.len(), idx.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
    let vecs = eig.eigenvectors.select_columns(&idx);
    (vals, vecs)
}

fn check_rank(vals: &DVector<f64>, order: usize) -> Result<(), PcaError> {
    let top = vals.get(0).copied().unwrap_or(0.0);
    let rank = vals.iter().filter(|&&l| l > RANK_TOL * top && l > 0.0).count();
    if rank < order {
        return Err(PcaError::RankDeficient { rank, order });
    }
    Ok(())
}

/// Two passes of modified Gram-Schmidt over the rows, preserving order and
/// direction.
fn orthonormalize_rows(f: &mut DMatrix<f64>) {
    for _ in 0..2 {
        for k in 0..f.nrows() {
            for j in 0..k {
                let proj = f.row(k).dot(&f.row(j));
                let rj = f.row(j).into_owned();
                f.row_mut(k).zip_apply(&rj, |x, r| *x -= proj * r);
            }
            let norm = f.row(k).norm();
            f.row_mut(k).unscale_mut(norm);
        }
    }
}

/// `f * (x - mean)`, always centering with the stored training mean.
pub fn project(stats: &CenteringStats, proj: &PcaProjector, x: &DMatrix<f64>) -> Result<DMatrix<f64>, PcaError> {
    check_rows(proj.input_dim(), x)?;
    Ok(&proj.f * stats.center(x)?)
}

fn check_rows(expected: usize, x: &DMatrix<f64>) -> Result<(), PcaError> {
    if x.nrows() != expected {
        return Err(PcaError::DimensionMismatch {
            expected,
            found: x.nrows(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
        fit_center(x).unwrap().center(x).unwrap()
    }

    #[test]
    fn center_examples() {
        let stats = fit_center(&DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 0.0])).unwrap();
        assert_eq!(stats.mean.as_slice(), &[2.0, 0.0]);

        let x = DMatrix::from_row_slice(1, 3, &[5.0, 5.0, 5.0]);
        let stats = fit_center(&x).unwrap();
        assert_eq!(stats.mean[0], 5.0);
        assert!(stats.center(&x).unwrap().iter().all(|&v| v == 0.0));

        let stats = fit_center(&DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(stats.mean[0], 2.0);

        assert_eq!(fit_center(&DMatrix::zeros(3, 1)), Err(PcaError::TooFewSamples(1)));
    }

    #[test]
    fn principal_axis_of_diagonal_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = 400;
        let mut x = DMatrix::zeros(2, v);
        for j in 0..v {
            let along: f64 = StandardNormal.sample(&mut rng);
            let across: f64 = StandardNormal.sample(&mut rng);
            let (a, b) = (2.0 * along, 0.05 * across);
            x[(0, j)] = (a + b) / 2f64.sqrt();
            x[(1, j)] = (a - b) / 2f64.sqrt();
        }
        let xc = centered(&x);
        let p = fit_pca(&xc, 1).unwrap();
        assert_abs_diff_eq!(p.f[(0, 0)], 0.5f64.sqrt(), epsilon = 1e-3);
        assert_abs_diff_eq!(p.f[(0, 1)], 0.5f64.sqrt(), epsilon = 1e-3);

        // closed-form 2x2 eigenvalue oracle
        let cov = &xc * xc.transpose() / (v as f64 - 1.0);
        let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
        let top = 0.5 * (a + c) + (0.25 * (a - c).powi(2) + b * b).sqrt();
        assert_abs_diff_eq!(p.eigenvalues[0], top, epsilon = 1e-10 * top);
    }

    #[test]
    fn full_rank_projection_reconstructs() {
        for (d, v) in [(4, 50), (30, 12)] {
            let xc = centered(&gaussian(d, v, 11));
            let n = d.min(v - 1);
            let p = fit_pca(&xc, n).unwrap();
            let gram = &p.f * p.f.transpose();
            assert!((gram - DMatrix::identity(n, n)).amax() < 1e-8);
            let recon = p.f.transpose() * (&p.f * &xc);
            assert!((recon - &xc).amax() < 1e-8);
        }
    }

    #[test]
    fn rank_one_data_is_captured_exactly() {
        let dir = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let coef = DVector::from_vec(vec![1.0, -1.0, 2.0, 0.5, -2.5]);
        let x = &dir * coef.transpose();
        let xc = centered(&x);
        let p = fit_pca(&xc, 1).unwrap();
        let recon = p.f.transpose() * (&p.f * &xc);
        assert!((recon - &xc).norm() < 1e-8);
        assert!(matches!(fit_pca(&xc, 2), Err(PcaError::RankDeficient { rank: 1, order: 2 })));
    }

    #[test]
    fn rejects_bad_orders_and_uncentered_input() {
        let x = gaussian(5, 4, 1);
        let xc = centered(&x);
        assert_eq!(fit_pca(&xc, 4), Err(PcaError::OrderTooLarge { order: 4, bound: 3 }));
        assert_eq!(fit_pca(&xc, 0), Err(PcaError::ZeroOrder));
        assert!(matches!(fit_pca(&x.add_scalar(1.0), 2), Err(PcaError::NotCentered { .. })));
    }

    #[test]
    fn projection_properties() {
        let x = gaussian(40, 25, 5);
        let stats = fit_center(&x).unwrap();
        let xc = stats.center(&x).unwrap();
        let p = fit_pca(&xc, 6).unwrap();

        // training data projects to f * xc
        let xhat = project(&stats, &p, &x).unwrap();
        assert!((&xhat - &p.f * &xc).amax() < 1e-12);

        // empirical row variances equal the eigenvalues and are non-increasing
        for k in 0..6 {
            let var = xhat.row(k).norm_squared() / 24.0;
            assert_abs_diff_eq!(var, p.eigenvalues[k], epsilon = 1e-6 * p.eigenvalues[k]);
            if k > 0 {
                assert!(p.eigenvalues[k] <= p.eigenvalues[k - 1]);
            }
        }

        // mean columns project to zero
        let means = DMatrix::from_fn(40, 3, |r, _| stats.mean[r]);
        assert!(project(&stats, &p, &means).unwrap().amax() < 1e-12);

        // a column inside the subspace round-trips
        let z = gaussian(6, 1, 9);
        let inside = p.f.transpose() * &z;
        let col = &inside + DMatrix::from_column_slice(40, 1, stats.mean.as_slice());
        let back = p.f.transpose() * project(&stats, &p, &col).unwrap();
        assert!((back - inside).amax() < 1e-10);

        // pseudo-inverse of an orthonormal-row matrix is its transpose
        let pinv = p.f.clone().pseudo_inverse(1e-12).unwrap();
        assert!((pinv - p.f.transpose()).amax() < 1e-8);

        assert!(matches!(
            project(&stats, &p, &DMatrix::zeros(39, 2)),
            Err(PcaError::DimensionMismatch { expected: 40, found: 39 })
        ));
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let xc = centered(&gaussian(8, 30, 21));
        let p = fit_pca(&xc, 5).unwrap();
        for row in p.f.row_iter() {
            let max = row.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(max > 0.0);
        }
        let t = p.truncate(2).unwrap();
        assert_eq!(t.f, p.f.rows(0, 2).into_owned());
    }
}
