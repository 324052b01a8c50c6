//! Perturbation of the orthogonal factor against the singular gap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{singular_gap, svd, zero_tol_for, Matrix};
use crate::problems::{derive_seed, Xoshiro256pp};

/// Gaps below this are treated as repeated singular values.
const MIN_PROBE_GAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    /// `||U'V'^T - U V^T||_F`.
    pub lhs: f64,
    /// `(2 sqrt 2 / kappa(M)) ||Delta||_F`.
    pub rhs: f64,
    pub kappa: f64,
    pub satisfied: bool,
}

/// Orthogonal factor and singular gap of a full-rank matrix with at least two
/// distinct singular values.
fn factor_and_gap(m: &Matrix) -> Result<(Matrix, f64)> {
    let f = svd(m)?;
    if f.r() < 2 {
        return Err(Error::InvalidInput(
            "the probe needs at least two singular values".into(),
        ));
    }
    let tol = zero_tol_for(m);
    let smallest = *f.sigma.last().expect("r >= 2");
    if f.numerical_rank(tol) < f.r() {
        return Err(Error::DegenerateSpectrum(smallest));
    }
    let kappa = singular_gap(&f.sigma, tol)?;
    if kappa < MIN_PROBE_GAP {
        return Err(Error::DegenerateSpectrum(kappa));
    }
    Ok((f.spectral_map(tol, |_| 1.0), kappa))
}

/// Compares the movement of `U V^T` under `M -> M + delta` with
/// `2 sqrt(2) ||delta||_F / kappa(M)`.
pub fn davis_kahan_probe(m: &Matrix, delta: &Matrix) -> Result<ProbeRecord> {
    m.ensure_same_shape(delta)?;
    let (q, kappa) = factor_and_gap(m)?;
    let (q2, _) = factor_and_gap(&m.add(delta)?)?;
    let lhs = q2.sub(&q)?.frobenius_norm();
    let rhs = 2.0 * 2f64.sqrt() / kappa * delta.frobenius_norm();
    Ok(ProbeRecord {
        lhs,
        rhs,
        kappa,
        satisfied: lhs <= rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCampaign {
    pub records: Vec<ProbeRecord>,
    pub satisfied_fraction: f64,
}

/// `pairs` random probes on square `n x n` Gaussian matrices with
/// `2 <= n <= max_dim`. Each perturbation is a Gaussian direction rescaled to
/// `||Delta||_F = u * delta_scale * kappa(M)` with `u` uniform on `(0, 1]`.
/// Pair `k` draws from `derive_seed(seed, k)`.
pub fn davis_kahan_campaign(
    seed: u64,
    pairs: usize,
    max_dim: usize,
    delta_scale: f64,
) -> Result<ProbeCampaign> {
    if pairs == 0 || max_dim < 2 {
        return Err(Error::InvalidInput("need pairs >= 1 and max_dim >= 2".into()));
    }
    if !(delta_scale.is_finite() && delta_scale >= 0.0) {
        return Err(Error::InvalidInput(format!("delta_scale must be >= 0, got {delta_scale}")));
    }
    let records = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = Xoshiro256pp::seed_from_u64(derive_seed(seed, k as u64));
            loop {
                let n = 2 + rng.index(max_dim - 1);
                let m = Matrix::new(n, n, rng.normals(n * n))?;
                let kappa = match factor_and_gap(&m) {
                    Ok((_, kappa)) => kappa,
                    Err(Error::DegenerateSpectrum(_)) => continue,
                    Err(e) => return Err(e),
                };
                let dir = Matrix::new(n, n, rng.normals(n * n))?;
                let u = 1.0 - rng.uniform01();
                let delta = dir.scale(u * delta_scale * kappa / dir.frobenius_norm());
                return davis_kahan_probe(&m, &delta);
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let ok = records.iter().filter(|r| r.satisfied).count();
    Ok(ProbeCampaign {
        satisfied_fraction: ok as f64 / records.len() as f64,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_perturbation() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [0.5, -1.0]]).unwrap();
        let r = davis_kahan_probe(&m, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.satisfied);
    }

    #[test]
    fn diagonal_perturbation_keeps_factor() {
        let m = Matrix::from_diag(2, 2, &[4.0, 1.0]);
        let d = Matrix::from_diag(2, 2, &[0.1, 0.0]);
        let r = davis_kahan_probe(&m, &d).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.kappa, 3.0);
        assert!((r.rhs - 2.0 * 2f64.sqrt() / 3.0 * 0.1).abs() < 1e-15);
        assert!(r.satisfied);
    }

    #[test]
    fn degenerate_inputs() {
        let m = Matrix::identity(3);
        assert!(matches!(
            davis_kahan_probe(&m, &Matrix::zeros(3, 3)),
            Err(Error::DegenerateSpectrum(_))
        ));
        let rank1 = Matrix::outer(&[1.0, 2.0], &[1.0, 1.0]);
        assert!(matches!(
            davis_kahan_probe(&rank1, &Matrix::zeros(2, 2)),
            Err(Error::DegenerateSpectrum(_))
        ));
        assert!(davis_kahan_probe(&m, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn campaign_is_deterministic() {
        let a = davis_kahan_campaign(5, 20, 5, 0.01).unwrap();
        assert_eq!(a, davis_kahan_campaign(5, 20, 5, 0.01).unwrap());
        assert_eq!(a.records.len(), 20);
    }
}
