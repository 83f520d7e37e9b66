//! Small dense linear-algebra helpers shared across the toolkit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Symmetric part `(m + m^T) / 2`.
pub fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_finite(m) {
        return Err(Error::NumericalFailure("matrix has non-finite entries".into()));
    }
    Ok(sym_part(m).symmetric_eigenvalues())
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eig(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.min())
}

/// Largest eigenvalue of the symmetric part.
pub fn max_eig(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.max())
}

/// Largest singular value, computed from the Gram matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    // the Gram matrix is as small as the thinner side of m
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    sym_part(&gram).symmetric_eigenvalues().max().max(0.0).sqrt()
}

/// Symmetric square root of a positive semidefinite matrix. Slightly
/// negative eigenvalues from roundoff are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_finite(m) {
        return Err(Error::NumericalFailure("matrix has non-finite entries".into()));
    }
    let eig = sym_part(m).symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Inverse of a symmetric positive definite matrix via eigendecomposition.
pub fn pd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_finite(m) {
        return Err(Error::NumericalFailure("matrix has non-finite entries".into()));
    }
    let eig = sym_part(m).symmetric_eigen();
    let lmin = eig.eigenvalues.min();
    let lmax = eig.eigenvalues.max();
    if !(lmin > 0.0) || lmin < 1e-14 * lmax.max(1.0) {
        return Err(Error::NumericalFailure(format!(
            "matrix is not positive definite (min eigenvalue {lmin:.3e})"
        )));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Inverse symmetric square root of a positive definite matrix.
pub fn pd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_finite(m) {
        return Err(Error::NumericalFailure("matrix has non-finite entries".into()));
    }
    let eig = sym_part(m).symmetric_eigen();
    let lmin = eig.eigenvalues.min();
    let lmax = eig.eigenvalues.max();
    if !(lmin > 0.0) || lmin < 1e-14 * lmax.max(1.0) {
        return Err(Error::NumericalFailure(format!(
            "matrix is not positive definite (min eigenvalue {lmin:.3e})"
        )));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Moore-Penrose pseudoinverse with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    if !is_finite(m) {
        return Err(Error::NumericalFailure("matrix has non-finite entries".into()));
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { rel_tol * smax } else { 0.0 };
    svd.pseudo_inverse(eps)
        .map_err(|e| Error::NumericalFailure(format!("pseudoinverse failed: {e}")))
}

/// Largest real part over the (possibly complex) eigenvalues of a square
/// matrix. Negative means Hurwitz.
pub fn max_real_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_finite(m) {
        return Err(Error::NumericalFailure("matrix has non-finite entries".into()));
    }
    Ok(m.clone().complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}
