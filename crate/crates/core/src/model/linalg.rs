use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive-definite matrix, retrying once
/// with `1e-10 · trace` added to the diagonal.
pub(crate) fn spd_cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let jitter = 1e-10 * m.trace().abs();
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => {
            let n = m.nrows();
            Cholesky::new(m + DMatrix::identity(n, n) * jitter).ok_or_else(|| {
                Error::Numerical(format!("{n}x{n} covariance is not positive definite"))
            })
        }
    }
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Symmetrizes and clips negative eigenvalues to zero.
pub(crate) fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    if sym.iter().all(|&v| v == 0.0) {
        return sym;
    }
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
