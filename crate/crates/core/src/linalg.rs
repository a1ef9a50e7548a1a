//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector};

/// Largest eigenvalue of a symmetric matrix. The input is symmetrized first.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().max()
}

/// Smallest eigenvalue of a symmetric matrix. The input is symmetrized first.
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().min()
}

/// `(m + mᵀ) / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `He(m) = m + mᵀ`
pub fn he(m: &DMatrix<f64>) -> DMatrix<f64> {
    m + m.transpose()
}

/// Spectral radius `max |λ_i(A)|` of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    assert!(a.is_square(), "spectral radius of a non-square matrix");
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solution of `AᵀPA − P = −I` through the Kronecker form, or `None` if singular.
pub fn discrete_lyapunov(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let lhs = DMatrix::identity(n * n, n * n) - at.kronecker(&at);
    let rhs = DMatrix::<f64>::identity(n, n);
    let v = lhs.lu().solve(&DVector::from_column_slice(rhs.as_slice()))?;
    Some(symmetrize(&DMatrix::from_column_slice(n, n, v.as_slice())))
}

/// Block-diagonal concatenation.
pub fn blkdiag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Diagonal matrix from a slice.
pub fn diag(entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(entries))
}

/// Max-abs entry norm.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Quadratic form `xᵀ M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Row-major nested vectors, the interchange layout for matrices.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inverse of [`to_rows`]. `cols` is only used when `rows` is empty.
pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Option<DMatrix<f64>> {
    let ncols = rows.first().map_or(cols, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&DMatrix::identity(4, 4)), 1.0);
        assert!((spectral_radius(&diag(&[0.5, -0.9])) - 0.9).abs() < 1e-15);
        // rotation by 90 degrees scaled by 0.7 has complex eigenvalues ±0.7i
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.7, 0.7, 0.0]);
        assert!((spectral_radius(&rot) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn blkdiag_places_blocks() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let b = DMatrix::from_element(1, 3, 2.0);
        let m = blkdiag(&[&a, &b]);
        assert_eq!(m.shape(), (3, 5));
        assert_eq!(m[(1, 1)], 1.0);
        assert_eq!(m[(2, 4)], 2.0);
        assert_eq!(m[(0, 3)], 0.0);
    }

    #[test]
    fn rows_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = to_rows(&m);
        assert_eq!(rows[0], vec![1.0, 2.0, 3.0]);
        assert_eq!(from_rows(&rows, 0).unwrap(), m);
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]], 0).is_none());
    }
}
