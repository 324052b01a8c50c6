//! Bound constants, the stability recursions, and the iterate and
//! momentum-error bounds.

use serde::{Deserialize, Serialize};

use super::{run_training_on, ConvergenceTrace, RunConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::HyperParams;
use crate::problems::{grad, Dataset, ProblemSpec};

/// Problem constants estimated over the visited region.
///
/// `l_hat` is the smoothness, `g_hat` the per-sample gradient bound and
/// `sigma_hat` the gradient-noise scale. `g_cap = max(g_hat, sqrt r)` and
/// `g_breve = g_cap + 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub l_hat: f64,
    pub g_hat: f64,
    pub sigma_hat: f64,
    pub r: usize,
    pub g_cap: f64,
    pub g_breve: f64,
}

impl BoundConstants {
    pub fn new(l_hat: f64, g_hat: f64, sigma_hat: f64, r: usize) -> Result<Self> {
        for (name, v) in [("L", l_hat), ("G", g_hat), ("sigma", sigma_hat)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let g_cap = g_hat.max((r as f64).sqrt());
        Ok(Self {
            l_hat,
            g_hat,
            sigma_hat,
            r,
            g_cap,
            g_breve: g_cap + 0.5,
        })
    }

    /// `L`, `G` and `sigma` each multiplied by `factor`; the caps are recomputed.
    pub fn inflated(&self, factor: f64) -> Self {
        let g_cap = (self.g_hat * factor).max((self.r as f64).sqrt());
        Self {
            l_hat: self.l_hat * factor,
            g_hat: self.g_hat * factor,
            sigma_hat: self.sigma_hat * factor,
            r: self.r,
            g_cap,
            g_breve: g_cap + 0.5,
        }
    }
}

/// Number of iterates sampled along a trajectory for constant estimation.
const ESTIMATION_POINTS: usize = 64;

/// Estimates the constants along the iterates of `trace`.
///
/// At up to 64 evenly spaced iterates every per-sample gradient is evaluated:
///
/// - `g_hat` is the largest per-sample gradient norm seen there or consumed
///   during the run;
/// - `sigma_hat` is the largest RMS deviation of per-sample gradients from
///   their mean;
/// - `l_hat` is the largest `||grad F_S(W) - grad F_S(W')|| / ||W - W'||`
///   over pairs of sampled iterates, 0 if they all coincide.
pub fn estimate_constants(
    spec: &ProblemSpec,
    data: &Dataset,
    trace: &ConvergenceTrace,
) -> Result<BoundConstants> {
    let consumed = trace
        .records
        .iter()
        .map(|r| r.sample_grad_norm)
        .fold(0.0, f64::max);
    estimate_constants_from(spec, data, &trace.iterates, consumed)
}

/// [`estimate_constants`] over explicit iterates; `consumed_grad_max` is the
/// largest per-sample gradient norm consumed during the run.
pub(crate) fn estimate_constants_from(
    spec: &ProblemSpec,
    data: &Dataset,
    its: &[Matrix],
    consumed_grad_max: f64,
) -> Result<BoundConstants> {
    let k = its.len().min(ESTIMATION_POINTS);
    let picks: Vec<&Matrix> = if k <= 1 {
        its.iter().collect()
    } else {
        (0..k).map(|j| &its[j * (its.len() - 1) / (k - 1)]).collect()
    };

    let mut g_hat = consumed_grad_max;
    let mut sigma_hat: f64 = 0.0;
    let mut means = Vec::with_capacity(picks.len());
    for w in &picks {
        let grads = data
            .samples
            .iter()
            .map(|s| grad(spec, w, s))
            .collect::<Result<Vec<_>>>()?;
        let n = grads.len() as f64;
        let mut mean = Matrix::zeros(spec.m, spec.n);
        for g in &grads {
            g_hat = g_hat.max(g.frobenius_norm());
            mean = mean.add(g)?;
        }
        let mean = mean.map(|v| v / n);
        let var = grads
            .iter()
            .map(|g| g.sub(&mean).map(|d| d.frobenius_norm().powi(2)))
            .sum::<Result<f64>>()?
            / n;
        sigma_hat = sigma_hat.max(var.sqrt());
        means.push(mean);
    }

    let mut l_hat: f64 = 0.0;
    for a in 0..picks.len() {
        for b in a + 1..picks.len() {
            let dw = picks[a].sub(picks[b])?.frobenius_norm();
            if dw > 0.0 {
                let dg = means[a].sub(&means[b])?.frobenius_norm();
                l_hat = l_hat.max(dg / dw);
            }
        }
    }
    BoundConstants::new(l_hat, g_hat, sigma_hat, spec.m.min(spec.n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    MuonBound,
    MiMuonBound,
}

/// `psi_t` and `phi_t` for `t = 1..=steps`, starting from `psi_0 = phi_0 = 0`:
///
/// ```text
/// psi_{t+1} = (1 - beta) psi_t + beta L phi_t + 2 beta sigma / N
/// phi_{t+1} = (1 - eta lambda) phi_t + c psi_{t+1}
/// ```
///
/// with `c = 2 sqrt(2) eta / kappa_floor` for [`BoundVariant::MuonBound`] and
/// `c = 2 sqrt(2) eta` for [`BoundVariant::MiMuonBound`].
pub fn stability_bound_recursion(
    constants: &BoundConstants,
    hp: &HyperParams,
    n_samples: usize,
    steps: usize,
    kappa_floor: f64,
    variant: BoundVariant,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if steps == 0 {
        return Err(Error::InvalidInput("bound recursion needs steps >= 1".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidInput("bound recursion needs N >= 1".into()));
    }
    let coupling = match variant {
        BoundVariant::MuonBound => {
            if !(kappa_floor > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "MuonBound needs kappa_floor > 0, got {kappa_floor}"
                )));
            }
            2.0 * 2f64.sqrt() * hp.eta / kappa_floor
        }
        BoundVariant::MiMuonBound => 2.0 * 2f64.sqrt() * hp.eta,
    };
    let (beta, l) = (hp.beta, constants.l_hat);
    let drive = 2.0 * beta * constants.sigma_hat / n_samples as f64;
    let decay = 1.0 - hp.eta * hp.lambda;
    let (mut psi, mut phi) = (0.0, 0.0);
    let mut psis = Vec::with_capacity(steps);
    let mut phis = Vec::with_capacity(steps);
    for _ in 0..steps {
        psi = (1.0 - beta) * psi + beta * l * phi + drive;
        phi = decay * phi + coupling * psi;
        psis.push(psi);
        phis.push(phi);
    }
    Ok((psis, phis))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// `||W_0|| <= eta G_cap` and `lambda <= 1 / (2 (1 + T) eta G_cap)`.
    pub preconditions_hold: bool,
    /// Largest `||W_t - W_{t-1}|| / (eta G_breve)`.
    pub max_step_ratio: f64,
    /// Largest `||W_t|| / ((t + 1) eta G_cap)`.
    pub max_norm_ratio: f64,
    pub step_violations: usize,
    pub norm_violations: usize,
}

impl LemmaReport {
    pub fn holds(&self) -> bool {
        self.step_violations == 0 && self.norm_violations == 0
    }
}

fn ratio(value: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        value / bound
    } else if value == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Checks `||W_t - W_{t-1}|| <= eta G_breve` and `||W_t|| <= (t + 1) eta G_cap`
/// at every step of a trace produced with `lemma_mode` set.
pub fn lemma_bound_check(
    trace: &ConvergenceTrace,
    constants: &BoundConstants,
    hp: &HyperParams,
) -> Result<LemmaReport> {
    if !trace.lemma_mode {
        return Err(Error::PreconditionUnchecked);
    }
    // Tolerates round-off in the norms, nothing more.
    const SLACK: f64 = 1.0 + 1e-12;
    let t_max = trace.steps();
    let eta_cap = hp.eta * constants.g_cap;
    let eta_breve = hp.eta * constants.g_breve;
    let w0_norm = trace.records[0].w_norm;
    let lambda_ok = hp.lambda == 0.0 || hp.lambda <= 1.0 / (2.0 * (1 + t_max) as f64 * eta_cap);
    let preconditions_hold = w0_norm <= eta_cap * SLACK && lambda_ok;

    let mut rep = LemmaReport {
        preconditions_hold,
        max_step_ratio: 0.0,
        max_norm_ratio: 0.0,
        step_violations: 0,
        norm_violations: 0,
    };
    for r in &trace.records {
        let norm_bound = (r.t + 1) as f64 * eta_cap;
        rep.max_norm_ratio = rep.max_norm_ratio.max(ratio(r.w_norm, norm_bound));
        if r.w_norm > norm_bound * SLACK {
            rep.norm_violations += 1;
        }
        if r.t > 0 {
            rep.max_step_ratio = rep.max_step_ratio.max(ratio(r.step_norm, eta_breve));
            if r.step_norm > eta_breve * SLACK {
                rep.step_violations += 1;
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumErrorReport {
    /// `(1 / (T + 1)) sum_{t=0}^{T} ||grad F_S(W_t) - M_{t+1}||_F`.
    pub empirical: f64,
    /// `sigma / sqrt(T beta) + (sqrt 2 / beta) L eta G_breve + sqrt(beta) sigma`.
    pub rhs: f64,
    pub constants: BoundConstants,
}

impl MomentumErrorReport {
    pub fn holds(&self) -> bool {
        self.empirical <= self.rhs
    }
}

/// Runs `T + 1` steps of `cfg` (with `T = cfg.steps`) and compares the
/// time-averaged momentum error with its bound. Without supplied constants
/// they are estimated from the run and inflated by 2.
pub fn momentum_error_track(
    cfg: &RunConfig,
    constants: Option<&BoundConstants>,
) -> Result<MomentumErrorReport> {
    if cfg.steps == 0 {
        return Err(Error::InvalidInput("momentum error needs steps >= 1".into()));
    }
    let data = cfg.dataset()?;
    let extended = RunConfig {
        steps: cfg.steps + 1,
        ..cfg.clone()
    };
    let trace = run_training_on(&extended, &data)?;
    let constants = match constants {
        Some(c) => *c,
        None => estimate_constants(&cfg.problem, &data, &trace)?.inflated(2.0),
    };
    let errs = &trace.momentum_errors;
    let empirical = errs.iter().sum::<f64>() / errs.len() as f64;
    let (t, beta, s) = (cfg.steps as f64, cfg.hp.beta, constants.sigma_hat);
    let rhs = s / (t * beta).sqrt()
        + 2f64.sqrt() / beta * constants.l_hat * cfg.hp.eta * constants.g_breve
        + beta.sqrt() * s;
    Ok(MomentumErrorReport {
        empirical,
        rhs,
        constants,
    })
}
