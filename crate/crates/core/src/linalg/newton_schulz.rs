//! Polynomial Newton–Schulz iteration for the orthogonal polar factor `U V^T`.
//!
//! Each step applies the odd quintic `p(x) = a x + b x^3 + c x^5` to every
//! singular value of the iterate:
//!
//! ```text
//! X_0     = M / ||M||_F                       (transposed first when rows > cols)
//! A_k     = X_k X_k^T
//! X_{k+1} = a X_k + (b A_k + c A_k^2) X_k
//! ```
//!
//! Frobenius pre-normalization puts every singular value in `(0, 1]`.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Coefficients `(a, b, c)` of the odd quintic applied per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NsCoeffs {
    /// Third-order Newton–Schulz quintic `(15 x - 10 x^3 + 3 x^5) / 8`.
    ///
    /// `p(1) = 1` with `p'(1) = p''(1) = 0`, so singular values in `(0, 1]`
    /// converge monotonically to one.
    pub const QUINTIC: NsCoeffs = NsCoeffs {
        a: 15.0 / 8.0,
        b: -10.0 / 8.0,
        c: 3.0 / 8.0,
    };

    /// The aggressive quintic from the Muon reference code. It maximises the
    /// slope at zero and deliberately does not fix `x = 1`: after a few steps
    /// singular values oscillate roughly inside `[0.7, 1.2]`.
    pub const MUON_REFERENCE: NsCoeffs = NsCoeffs {
        a: 3.4445,
        b: -4.7750,
        c: 2.0315,
    };

    /// Classic cubic Newton–Schulz, `(3 x - x^3) / 2`.
    pub const CUBIC: NsCoeffs = NsCoeffs {
        a: 1.5,
        b: -0.5,
        c: 0.0,
    };

    /// The scalar polynomial applied to each singular value.
    pub fn apply_scalar(&self, x: f64) -> f64 {
        let x2 = x * x;
        x * (self.a + x2 * (self.b + self.c * x2))
    }
}

impl Default for NsCoeffs {
    fn default() -> Self {
        Self::QUINTIC
    }
}

/// Approximates `U V^T` of `m` with `steps` quintic iterations.
pub fn newton_schulz(m: &Matrix, steps: usize, coeffs: NsCoeffs) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::InvalidInput("newton_schulz needs steps >= 1".into()));
    }
    if !m.is_finite() {
        return Err(Error::InvalidMatrix("non-finite Newton-Schulz input".into()));
    }
    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroInput);
    }
    let transposed = m.rows() > m.cols();
    let mut x = if transposed { m.transpose() } else { m.clone() };
    x = x.scale(1.0 / norm);

    for _ in 0..steps {
        let gram = x.gram_rows();
        let gram_sq = gram.matmul_unchecked(&gram);
        let poly = gram.zip_map(&gram_sq, |g, g2| coeffs.b * g + coeffs.c * g2);
        let px = poly.matmul_unchecked(&x);
        x = x.zip_map(&px, |xi, pi| coeffs.a * xi + pi);
    }
    if !x.is_finite() {
        return Err(Error::InvalidMatrix(
            "Newton-Schulz iterate became non-finite".into(),
        ));
    }
    Ok(if transposed { x.transpose() } else { x })
}
