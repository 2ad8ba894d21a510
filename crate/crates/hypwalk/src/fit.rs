//! Small least-squares helpers.

use nalgebra::{DMatrix, DVector};

/// Least-squares coefficients for `y ≈ X c`; `None` when underdetermined.
pub(crate) fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    if rows.len() < k || rows.len() != y.len() {
        return None;
    }
    let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(y);
    let c = x.svd(true, true).solve(&b, 1e-12).ok()?;
    Some(c.iter().copied().collect())
}

