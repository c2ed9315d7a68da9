use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// 2-norm condition number of a symmetric matrix (infinite if singular).
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or_else(|| Error::Singular { condition: condition_number(m) })?;
    let inv = chol.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { condition: condition_number(m) });
    }
    Ok(symmetrize(inv))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `s' A s` by explicit summation.
#[inline]
pub(crate) fn quad_form(a: &DMatrix<f64>, s: &[f64]) -> f64 {
    let d = s.len();
    let mut total = 0.0;
    for j in 0..d {
        let mut col = 0.0;
        for i in 0..d {
            col += s[i] * a[(i, j)];
        }
        total += col * s[j];
    }
    total
}

pub(crate) fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
