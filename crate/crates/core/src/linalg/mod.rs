//! Dense small-matrix linear algebra: exact SVD, Newton–Schulz
//! orthogonalization, norms and singular gaps.
//!
//! Everything here is a pure function of its inputs.

mod matrix;
mod newton_schulz;
mod svd;

pub use matrix::Matrix;
pub use newton_schulz::{newton_schulz, NsCoeffs};
pub use svd::{svd, SvdResult, MAX_EXACT_DIM, MAX_SWEEPS, ROTATION_TOL};

use crate::error::{Error, Result};

/// Relative threshold below which a singular value counts as zero.
pub const RELATIVE_ZERO_TOL: f64 = 1e-12;

/// `sqrt(tr(M^T M))`.
pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}

/// Zero threshold used for a matrix's spectrum: `1e-12 * ||M||_F`.
pub fn zero_tol_for(m: &Matrix) -> f64 {
    RELATIVE_ZERO_TOL * m.frobenius_norm()
}

/// Minimum pairwise distance between singular values strictly above
/// `zero_tol`.
///
/// Returns `f64::INFINITY` when fewer than two values survive the filter:
/// there are no pairs to separate.
pub fn singular_gap(sigma: &[f64], zero_tol: f64) -> Result<f64> {
    if sigma.is_empty() {
        return Err(Error::InvalidInput("singular_gap of an empty spectrum".into()));
    }
    let mut kept: Vec<f64> = sigma.iter().copied().filter(|&s| s > zero_tol).collect();
    if kept.len() < 2 {
        return Ok(f64::INFINITY);
    }
    kept.sort_by(|a, b| b.total_cmp(a));
    Ok(kept
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min))
}

/// `||Q^T Q - I||_F`, evaluated on the thin orientation of `q`.
pub fn orthogonality_defect(q: &Matrix) -> Result<f64> {
    let gram = if q.rows() >= q.cols() {
        q.gram_cols()
    } else {
        q.gram_rows()
    };
    let n = gram.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = gram[(i, j)] - if i == j { 1.0 } else { 0.0 };
            acc += d * d;
        }
    }
    Ok(acc.sqrt())
}

/// Exact `U V^T` with directions of singular values `<= 1e-12 ||M||_F`
/// dropped. Returns the zero matrix for a zero input.
pub fn polar_factor(m: &Matrix) -> Result<Matrix> {
    let tol = zero_tol_for(m);
    Ok(svd(m)?.spectral_map(tol, |_| 1.0))
}
