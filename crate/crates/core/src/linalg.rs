//! Thin ndarray/nalgebra bridge for the few dense factorizations we need.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;

pub(crate) fn to_na(a: &Array2<Complex64>) -> DMatrix<Complex64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[(i, j)])
}

/// Eigenvalues of a Hermitian matrix, sorted descending. The input is
/// symmetrized first so that 1e-15-level asymmetry from accumulation does
/// not perturb the decomposition.
pub(crate) fn hermitian_eigenvalues_desc(a: &Array2<Complex64>) -> Result<Vec<f64>> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::dims(format!("matrix is {r}x{c}, expected square")));
    }
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::numerical("matrix contains non-finite entries"));
    }
    let m = to_na(a);
    let herm = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(vals)
}
