//! Small dense helpers shared by the estimator, the auxiliary system and the
//! condition checkers.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `m ⊗ I_n`.
pub fn kron_identity(m: &Matrix, n: usize) -> Matrix {
    let (rows, cols) = m.shape();
    let mut out = Matrix::zeros(rows * n, cols * n);
    for i in 0..rows {
        for j in 0..cols {
            let v = m[(i, j)];
            if v != 0.0 {
                for t in 0..n {
                    out[(i * n + t, j * n + t)] = v;
                }
            }
        }
    }
    out
}

/// `(m + mᵀ)/2`, built entrywise so the result is bit-symmetric.
pub fn symmetric_part(m: &Matrix) -> Matrix {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "symmetric_part needs a square matrix");
    Matrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)]) / 2.0)
}

/// Max-norm of `m - mᵀ`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetric_part(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Smallest and largest singular values.
pub fn singular_range(m: &Matrix) -> (f64, f64) {
    let sv = m.singular_values();
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().copied().fold(0.0, f64::max);
    (lo, hi)
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Block-diagonal stacking of rectangular blocks.
pub fn block_diagonal(blocks: &[Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Builds a matrix from nested rows; all rows must share a length.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
