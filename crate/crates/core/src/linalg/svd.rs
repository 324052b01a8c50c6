//! One-sided (Hestenes) Jacobi SVD for small dense matrices.
//!
//! The matrix is first put in its tall orientation (`rows >= cols`). Column
//! pairs are then rotated in a fixed cyclic order `(0,1), (0,2), ..., (n-2,n-1)`
//! until every pair is orthogonal to relative tolerance [`ROTATION_TOL`]. The
//! fixed order makes the result a deterministic function of the input bits.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Sweep cap before giving up with [`Error::SvdNoConverge`].
pub const MAX_SWEEPS: usize = 60;

/// A pair of columns is considered orthogonal once
/// `|a_p . a_q| <= ROTATION_TOL * |a_p| |a_q|`.
pub const ROTATION_TOL: f64 = 1e-14;

/// Largest `min(rows, cols)` accepted by the exact path.
pub const MAX_EXACT_DIM: usize = 512;

/// Thin SVD `M = U diag(sigma) V^T` with `r = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    /// `rows x r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative.
    pub sigma: Vec<f64>,
    /// `cols x r`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.r()
    }

    pub fn r(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul_unchecked(&self.v.transpose())
    }

    /// `U f(Sigma) V^T` restricted to the singular values above `zero_tol`;
    /// directions with `sigma <= zero_tol` are dropped from the product.
    pub fn spectral_map(&self, zero_tol: f64, f: impl Fn(f64) -> f64) -> Matrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for (k, &s) in self.sigma.iter().enumerate() {
            if s <= zero_tol {
                continue;
            }
            let w = f(s);
            for i in 0..m {
                let ui = self.u[(i, k)] * w;
                if ui == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += ui * self.v[(j, k)];
                }
            }
        }
        out
    }

    /// Number of singular values strictly above `zero_tol`.
    pub fn numerical_rank(&self, zero_tol: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > zero_tol).count()
    }
}

/// Exact thin SVD by one-sided Jacobi.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::InvalidMatrix("SVD input has non-finite entries".into()));
    }
    let r = m.rows().min(m.cols());
    if r > MAX_EXACT_DIM {
        return Err(Error::InvalidInput(format!(
            "min(rows, cols) = {r} exceeds the exact SVD limit of {MAX_EXACT_DIM}"
        )));
    }
    if m.rows() >= m.cols() {
        jacobi_tall(m)
    } else {
        let t = jacobi_tall(&m.transpose())?;
        Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rotates columns `p < q` of a column-major buffer with column length `len`.
fn rotate(buf: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = buf.split_at_mut(q * len);
    let cp = &mut head[p * len..(p + 1) * len];
    let cq = &mut tail[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);

    // Column-major working copies: columns of A*V and of V.
    let mut work = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            work[j * m + i] = a[(i, j)];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let cp = &work[p * m..(p + 1) * m];
                let cq = &work[q * m..(q + 1) * m];
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if gamma == 0.0 || gamma.abs() <= ROTATION_TOL * alpha.sqrt() * beta.sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                rotate(&mut work, m, p, q, c, s);
                rotate(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
        sweeps += 1;
        if sweeps >= MAX_SWEEPS {
            return Err(Error::SvdNoConverge { sweeps });
        }
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| dot(&work[j * m..(j + 1) * m], &work[j * m..(j + 1) * m]).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma_max = norms[order[0]];
    // Columns this small relative to the largest carry no reliable direction;
    // their left vectors are completed to an orthonormal set instead.
    let null_tol = sigma_max * (m as f64) * f64::EPSILON;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        if s > null_tol && s > 0.0 {
            u_cols.push(work[j * m..(j + 1) * m].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(Vec::new());
            pending.push(k);
        }
    }
    for k in pending {
        let basis: Vec<&[f64]> = u_cols
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| c.as_slice())
            .collect();
        u_cols[k] = complete_basis(&basis, m);
    }

    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        sigma.push(norms[j]);
        for i in 0..m {
            u[(i, k)] = u_cols[k][i];
        }
        for i in 0..n {
            vm[(i, k)] = v[j * n + i];
        }
    }
    Ok(SvdResult { u, sigma, v: vm })
}

/// Unit vector orthogonal to every vector in `basis`, built from the
/// coordinate axis with the largest residual after two Gram-Schmidt passes.
fn complete_basis(basis: &[&[f64]], m: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..m {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d = dot(&e, b);
                for (x, y) in e.iter_mut().zip(b.iter()) {
                    *x -= d * y;
                }
            }
        }
        let nrm = dot(&e, &e).sqrt();
        if best.as_ref().is_none_or(|(bn, _)| nrm > *bn) {
            best = Some((nrm, e));
        }
    }
    let (nrm, mut e) = best.expect("m >= 1");
    for x in &mut e {
        *x /= nrm;
    }
    e
}
