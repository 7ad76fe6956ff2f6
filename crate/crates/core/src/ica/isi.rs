use nalgebra::DMatrix;

/// Normalized Amari inter-symbol interference of the global matrix `w * a`.
///
/// Zero exactly when `w * a` is a scaled permutation; one for a matrix with
/// all entries of equal magnitude.
pub fn isi(w: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    amari(&(w * a))
}

pub(crate) fn amari(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    if n < 2 {
        return 0.0;
    }
    let abs = g.abs();
    let line_sum = |values: Vec<f64>| {
        let max = values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter().sum::<f64>() / max - 1.0
        } else {
            (n - 1) as f64
        }
    };
    let rows: f64 = abs.row_iter().map(|r| line_sum(r.iter().copied().collect())).sum();
    let cols: f64 = abs.column_iter().map(|c| line_sum(c.iter().copied().collect())).sum();
    (rows + cols) / (2.0 * n as f64 * (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scaled_permutation_is_zero() {
        let g = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.0, 0.0, 0.0, -5.0, 0.1, 0.0, 0.0]);
        assert_eq!(amari(&g), 0.0);
    }

    #[test]
    fn all_ones_is_one() {
        assert_abs_diff_eq!(amari(&DMatrix::from_element(2, 2, 1.0)), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(amari(&DMatrix::from_element(5, 5, -3.0)), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_inverse_is_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let w = a.clone().try_inverse().unwrap();
        assert!(isi(&w, &a) < 1e-15);
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        // rows: 1.5/1 - 1 + 1.5/1 - 1 = 1 ; cols: same = 1 ; total 2 / 4
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert_abs_diff_eq!(amari(&g), 0.5, epsilon = 1e-15);
    }
}
