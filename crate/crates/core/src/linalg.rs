//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative tolerance for symmetry checks.
pub const SYMMETRY_RTOL: f64 = 1e-12;
/// Relative tolerance for negative eigenvalues in PSD checks.
pub const PSD_RTOL: f64 = 1e-10;

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, rtol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m);
    max_abs(&(m - m.transpose())) <= rtol * scale
}

fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).min()
}

/// PSD up to `-rtol * spectral_norm`.
pub fn is_psd(m: &DMatrix<f64>, rtol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let ev = eigenvalues(m);
    let norm = ev.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    ev.min() >= -rtol * norm
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    m.nrows() > 0 && m.clone().cholesky().is_some() && min_eigenvalue(m) > 0.0
}

/// `xᵀ M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Symmetric square root factor `F` with `F Fᵀ = M`, clamping negative eigenvalues to zero.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
