//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a x = b` for symmetric positive-definite `a` through a Cholesky factorization.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("spd_solve"))?;
    Ok(chol.solve(b))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().min()
}

/// Largest absolute eigenvalue of the symmetric part of `m` (its spectral norm).
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().amax()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `vᵀ m v`
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}
