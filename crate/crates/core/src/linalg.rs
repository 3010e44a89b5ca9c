//! Small matrix helpers shared across modules.

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Spectral norm (largest singular value).
pub fn spectral_norm<S: Scalar>(m: &DMatrix<S>) -> S {
    if m.is_empty() {
        return S::zero();
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(S::zero(), |a, b| if b > a { b } else { a })
}

pub fn frobenius_norm<S: Scalar>(m: &DMatrix<S>) -> S {
    m.norm()
}

/// Smallest eigenvalue of the symmetric part of a square matrix.
pub fn min_sym_eigenvalue<S: Scalar>(m: &DMatrix<S>) -> S {
    let sym = (m + m.transpose()) * S::of(0.5);
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .reduce(|a, b| if b < a { b } else { a })
        .unwrap_or(S::zero())
}

pub fn asymmetry<S: Scalar>(m: &DMatrix<S>) -> S {
    (m - m.transpose()).norm()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(dim_err(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn vector_from_slice(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Casts an `f64` matrix into another scalar type.
pub fn cast_matrix<S: Scalar>(m: &DMatrix<f64>) -> DMatrix<S> {
    m.map(S::of)
}

pub fn cast_vector<S: Scalar>(v: &DVector<f64>) -> DVector<S> {
    v.map(S::of)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_gain_norm_is_euclidean() {
        let k = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert!((spectral_norm(&k) - 5.0_f64).abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -7.0, 2.0]));
        assert!((spectral_norm(&m) - 7.0_f64).abs() < 1e-12);
    }

    #[test]
    fn min_eigenvalue_of_psd() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((min_sym_eigenvalue(&m) - 1.0_f64).abs() < 1e-12);
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let m = matrix_from_rows(&rows, "m").unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(matrix_to_rows(&m), rows);
        assert!(matrix_from_rows(&[vec![1.0], vec![1.0, 2.0]], "m").is_err());
    }
}
