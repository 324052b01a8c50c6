//! Single-step update rules for one matrix parameter.
//!
//! All four optimizers share the momentum estimate
//!
//! ```text
//! M_t = beta * grad + (1 - beta) * M_{t-1}
//! W_t = (1 - eta * lambda) * W_{t-1} - eta * D_t
//! ```
//!
//! and differ only in the direction `D_t`:
//!
//! | optimizer | direction                                          |
//! |-----------|----------------------------------------------------|
//! | SGDM      | `M_t`                                              |
//! | Muon      | `U_t V_t^T`                                        |
//! | MiMuon    | `U_t V_t^T` if the decision value is `>= tau`, else `M_t` |
//! | MuSGD     | `w_mu * U_t V_t^T + w_sgd * M_t`                   |
//!
//! The decision value is the singular gap of `M_t` ([`SwitchMode::ExactGap`])
//! or its Frobenius norm ([`SwitchMode::FrobeniusProxy`]), always evaluated
//! after the momentum update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{newton_schulz, singular_gap, svd, zero_tol_for, Matrix, NsCoeffs, SvdResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    ExactGap,
    FrobeniusProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthoMode {
    ExactSvd,
    NewtonSchulz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Orthogonal,
    Momentum,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Orthogonal => "orthogonal",
            Branch::Momentum => "momentum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgdm,
    Muon,
    #[serde(rename = "mimuon")]
    MiMuon,
    #[serde(rename = "musgd")]
    MuSgd,
}

impl OptimizerKind {
    pub fn step(
        self,
        state: &OptimizerState,
        grad: &Matrix,
        hp: &HyperParams,
    ) -> Result<StepOutcome> {
        match self {
            OptimizerKind::Sgdm => sgdm_step(state, grad, hp),
            OptimizerKind::Muon => muon_step(state, grad, hp),
            OptimizerKind::MiMuon => mimuon_step(state, grad, hp),
            OptimizerKind::MuSgd => musgd_step(state, grad, hp),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgdm => "sgdm",
            OptimizerKind::Muon => "muon",
            OptimizerKind::MiMuon => "mimuon",
            OptimizerKind::MuSgd => "musgd",
        }
    }
}

/// Hyperparameters of one matrix parameter.
///
/// `beta` weights the *new* gradient. Implementations following the
/// `buf = mu * buf + g; W -= lr * orth(buf)` convention map onto this form
/// with `beta = 1 / (1 + mu)` and `eta = lr * beta`; see
/// [`HyperParams::from_muon_convention`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub eta: f64,
    pub beta: f64,
    pub lambda: f64,
    pub tau: f64,
    pub switch_mode: SwitchMode,
    pub ortho_mode: OrthoMode,
    pub ns_steps: usize,
    pub ns_coeffs: NsCoeffs,
    pub musgd_w_mu: f64,
    pub musgd_w_sgd: f64,
}

/// Momentum `mu = 0.95` of the tuned Muon/MiMuon runs.
pub const DEFAULT_MU: f64 = 0.95;

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 0.02,
            beta: mu_to_beta(DEFAULT_MU),
            lambda: 0.0,
            tau: 0.01,
            switch_mode: SwitchMode::ExactGap,
            ortho_mode: OrthoMode::ExactSvd,
            ns_steps: 5,
            ns_coeffs: NsCoeffs::default(),
            musgd_w_mu: 0.7,
            musgd_w_sgd: 0.4,
        }
    }
}

/// `beta = 1 / (1 + mu)`.
pub fn mu_to_beta(mu: f64) -> f64 {
    1.0 / (1.0 + mu)
}

/// `mu = (1 - beta) / beta`.
pub fn beta_to_mu(beta: f64) -> f64 {
    (1.0 - beta) / beta
}

impl HyperParams {
    /// Converts `(lr, mu)` from the heavy-ball convention into this crate's
    /// `(eta, beta)` form.
    pub fn from_muon_convention(lr: f64, mu: f64) -> Self {
        let beta = mu_to_beta(mu);
        Self {
            eta: lr * beta,
            beta,
            ..Self::default()
        }
    }

    /// Inverse of [`HyperParams::from_muon_convention`]: `(lr, mu)`.
    pub fn muon_convention(&self) -> (f64, f64) {
        (self.eta / self.beta, beta_to_mu(self.beta))
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        Self {
            eta,
            ..self.clone()
        }
    }

    /// Checks the parameter ranges.
    ///
    /// `eta = 0` and `tau = 0` are accepted: the harness uses them as the
    /// frozen-iterate and always-orthogonal degenerate settings.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad(format!("eta must be finite and >= 0, got {}", self.eta));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.eta * self.lambda >= 1.0 {
            return bad(format!(
                "weight decay must satisfy lambda < 1/eta, got eta*lambda = {}",
                self.eta * self.lambda
            ));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return bad(format!("tau must be >= 0, got {}", self.tau));
        }
        if self.ns_steps == 0 {
            return bad("ns_steps must be >= 1".into());
        }
        if !(self.musgd_w_mu >= 0.0 && self.musgd_w_sgd >= 0.0) {
            return bad("MuSGD weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn orthogonalizer(&self) -> Orthogonalizer {
        Orthogonalizer {
            mode: self.ortho_mode,
            ns_steps: self.ns_steps,
            ns_coeffs: self.ns_coeffs,
        }
    }
}

/// How `U V^T` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orthogonalizer {
    pub mode: OrthoMode,
    pub ns_steps: usize,
    pub ns_coeffs: NsCoeffs,
}

impl Orthogonalizer {
    pub fn exact() -> Self {
        Self {
            mode: OrthoMode::ExactSvd,
            ns_steps: 5,
            ns_coeffs: NsCoeffs::default(),
        }
    }

    pub fn newton_schulz(steps: usize) -> Self {
        Self {
            mode: OrthoMode::NewtonSchulz,
            ns_steps: steps,
            ns_coeffs: NsCoeffs::default(),
        }
    }
}

/// Iterate, momentum and step counter of one matrix parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub w: Matrix,
    pub m: Matrix,
    pub t: usize,
}

impl OptimizerState {
    /// Fresh state at `t = 0` with zero momentum.
    pub fn new(w0: Matrix) -> Self {
        let (r, c) = w0.shape();
        Self {
            w: w0,
            m: Matrix::zeros(r, c),
            t: 0,
        }
    }

    pub fn with_momentum(w: Matrix, m: Matrix, t: usize) -> Result<Self> {
        w.ensure_same_shape(&m)?;
        Ok(Self { w, m, t })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub new_state: OptimizerState,
    pub branch: Branch,
    /// Singular gap (`ExactGap`) or `||M_t||_F` (`FrobeniusProxy`) of the new
    /// momentum. Only MiMuon acts on it.
    pub gap_value: f64,
    /// The direction `D_t` actually applied.
    pub update_direction: Matrix,
}

/// `beta * grad + (1 - beta) * m_prev`.
pub fn momentum_update(m_prev: &Matrix, grad: &Matrix, beta: f64) -> Result<Matrix> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1], got {beta}")));
    }
    grad.lin_comb(beta, m_prev, 1.0 - beta)
        .map_err(|_| Error::shape(m_prev.shape(), grad.shape()))
}

/// `G(M, alpha) = U Sigma^alpha V^T`, with the power taken over non-zero
/// singular values only.
///
/// `alpha = 1` returns `M` without factorizing. `alpha = 0` is the orthogonal
/// factor, by exact SVD or Newton–Schulz. Other exponents need the exact SVD.
pub fn gradient_mapping(m: &Matrix, alpha: f64, ortho: &Orthogonalizer) -> Result<Matrix> {
    if alpha == 1.0 {
        return Ok(m.clone());
    }
    if alpha == 0.0 && m.is_zero() {
        return Err(Error::ZeroInput);
    }
    match ortho.mode {
        OrthoMode::NewtonSchulz if alpha == 0.0 => newton_schulz(m, ortho.ns_steps, ortho.ns_coeffs),
        OrthoMode::NewtonSchulz => Err(Error::UnsupportedMode(format!(
            "Newton-Schulz only approximates alpha = 0, got alpha = {alpha}"
        ))),
        OrthoMode::ExactSvd => {
            let tol = zero_tol_for(m);
            let f = svd(m)?;
            if alpha == 0.0 {
                Ok(f.spectral_map(tol, |_| 1.0))
            } else {
                Ok(f.spectral_map(tol, |s| s.powf(alpha)))
            }
        }
    }
}

/// Decision value of `m` and, when it was computed, the SVD behind it.
fn decision_value(m: &Matrix, mode: SwitchMode) -> Result<(f64, Option<SvdResult>)> {
    match mode {
        SwitchMode::FrobeniusProxy => Ok((m.frobenius_norm(), None)),
        SwitchMode::ExactGap => {
            let f = svd(m)?;
            let gap = singular_gap(&f.sigma, zero_tol_for(m))?;
            Ok((gap, Some(f)))
        }
    }
}

/// `U V^T` of the momentum. A zero momentum has no non-zero singular
/// directions, so its orthogonal factor is the zero matrix.
fn orthogonal_direction(m: &Matrix, hp: &HyperParams, cached: Option<SvdResult>) -> Result<Matrix> {
    if m.is_zero() {
        return Ok(Matrix::zeros(m.rows(), m.cols()));
    }
    match (hp.ortho_mode, cached) {
        (OrthoMode::ExactSvd, Some(f)) => Ok(f.spectral_map(zero_tol_for(m), |_| 1.0)),
        _ => gradient_mapping(m, 0.0, &hp.orthogonalizer()),
    }
}

fn apply_update(w: &Matrix, direction: &Matrix, hp: &HyperParams) -> Matrix {
    let decay = 1.0 - hp.eta * hp.lambda;
    w.zip_map(direction, |wi, di| decay * wi - hp.eta * di)
}

fn next_momentum(state: &OptimizerState, grad: &Matrix, hp: &HyperParams) -> Result<Matrix> {
    state.w.ensure_same_shape(grad)?;
    momentum_update(&state.m, grad, hp.beta)
}

fn finish(
    state: &OptimizerState,
    m_new: Matrix,
    direction: Matrix,
    branch: Branch,
    gap_value: f64,
    hp: &HyperParams,
) -> StepOutcome {
    let w_new = apply_update(&state.w, &direction, hp);
    StepOutcome {
        new_state: OptimizerState {
            w: w_new,
            m: m_new,
            t: state.t + 1,
        },
        branch,
        gap_value,
        update_direction: direction,
    }
}

/// Momentum SGD: `W_t = (1 - eta lambda) W_{t-1} - eta M_t`.
pub fn sgdm_step(state: &OptimizerState, grad: &Matrix, hp: &HyperParams) -> Result<StepOutcome> {
    let m_new = next_momentum(state, grad, hp)?;
    let (gap, _) = decision_value(&m_new, hp.switch_mode)?;
    let dir = m_new.clone();
    Ok(finish(state, m_new, dir, Branch::Momentum, gap, hp))
}

/// Muon: `W_t = (1 - eta lambda) W_{t-1} - eta U_t V_t^T`.
pub fn muon_step(state: &OptimizerState, grad: &Matrix, hp: &HyperParams) -> Result<StepOutcome> {
    let m_new = next_momentum(state, grad, hp)?;
    let (gap, cached) = decision_value(&m_new, hp.switch_mode)?;
    let dir = orthogonal_direction(&m_new, hp, cached)?;
    Ok(finish(state, m_new, dir, Branch::Orthogonal, gap, hp))
}

/// MiMuon: the Muon update when the decision value is `>= tau`, the SGDM
/// update otherwise.
pub fn mimuon_step(state: &OptimizerState, grad: &Matrix, hp: &HyperParams) -> Result<StepOutcome> {
    let m_new = next_momentum(state, grad, hp)?;
    let (gap, cached) = decision_value(&m_new, hp.switch_mode)?;
    if gap >= hp.tau {
        let dir = orthogonal_direction(&m_new, hp, cached)?;
        Ok(finish(state, m_new, dir, Branch::Orthogonal, gap, hp))
    } else {
        let dir = m_new.clone();
        Ok(finish(state, m_new, dir, Branch::Momentum, gap, hp))
    }
}

/// MuSGD: `D_t = w_mu U_t V_t^T + w_sgd M_t`, recorded as an orthogonal step.
pub fn musgd_step(state: &OptimizerState, grad: &Matrix, hp: &HyperParams) -> Result<StepOutcome> {
    let m_new = next_momentum(state, grad, hp)?;
    let (gap, cached) = decision_value(&m_new, hp.switch_mode)?;
    let ortho = orthogonal_direction(&m_new, hp, cached)?;
    let dir = ortho.lin_comb(hp.musgd_w_mu, &m_new, hp.musgd_w_sgd)?;
    Ok(finish(state, m_new, dir, Branch::Orthogonal, gap, hp))
}

/// Independent matrix parameters stepped in order with one optimizer.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub kind: OptimizerKind,
    pub members: Vec<(OptimizerState, HyperParams)>,
}

impl ParamGroup {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            members: Vec::new(),
        }
    }

    pub fn push(&mut self, w0: Matrix, hp: HyperParams) -> Result<()> {
        hp.validate()?;
        self.members.push((OptimizerState::new(w0), hp));
        Ok(())
    }

    /// Applies one step to every member; `grads[k]` belongs to member `k`.
    /// Members are left untouched if any step fails.
    pub fn step(&mut self, grads: &[Matrix]) -> Result<Vec<StepOutcome>> {
        if grads.len() != self.members.len() {
            return Err(Error::InvalidInput(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.members.len()
            )));
        }
        let outcomes = self
            .members
            .iter()
            .zip(grads)
            .map(|((state, hp), g)| self.kind.step(state, g, hp))
            .collect::<Result<Vec<_>>>()?;
        for ((state, _), out) in self.members.iter_mut().zip(&outcomes) {
            *state = out.new_state.clone();
        }
        Ok(outcomes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hp(eta: f64, beta: f64, lambda: f64) -> HyperParams {
        HyperParams {
            eta,
            beta,
            lambda,
            ..HyperParams::default()
        }
    }

    fn m1(v: f64) -> Matrix {
        Matrix::from_rows(&[[v]]).unwrap()
    }

    fn diag(d: &[f64]) -> Matrix {
        Matrix::from_diag(d.len(), d.len(), d)
    }

    #[test]
    fn momentum_update_examples() {
        let g = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let z = Matrix::zeros(2, 2);
        assert_eq!(momentum_update(&z, &g, 1.0).unwrap(), g);
        let fixed = momentum_update(&g, &g, 0.3).unwrap();
        assert!(fixed.sub(&g).unwrap().frobenius_norm() < 1e-15);
        assert_eq!(momentum_update(&m1(2.0), &m1(4.0), 0.5).unwrap(), m1(3.0));
        assert!(matches!(
            momentum_update(&z, &Matrix::zeros(2, 3), 0.5),
            Err(Error::Shape { .. })
        ));
        assert!(momentum_update(&z, &g, 0.0).is_err());
    }

    #[test]
    fn gradient_mapping_examples() {
        let exact = Orthogonalizer::exact();
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap();
        assert_eq!(gradient_mapping(&m, 1.0, &exact).unwrap(), m);
        assert_eq!(gradient_mapping(&diag(&[3.0, 1.0]), 0.0, &exact).unwrap(), Matrix::identity(2));
        let sqrt = gradient_mapping(&diag(&[4.0, 1.0]), 0.5, &exact).unwrap();
        assert!(sqrt.sub(&diag(&[2.0, 1.0])).unwrap().frobenius_norm() < 1e-15);

        assert_eq!(
            gradient_mapping(&Matrix::zeros(2, 2), 0.0, &exact),
            Err(Error::ZeroInput)
        );
        let ns = Orthogonalizer::newton_schulz(5);
        assert!(matches!(
            gradient_mapping(&m, 0.5, &ns),
            Err(Error::UnsupportedMode(_))
        ));
        assert!(gradient_mapping(&m, 0.0, &ns).is_ok());
    }

    #[test]
    fn muon_step_examples() {
        let g = diag(&[4.0, 1.0]);
        let s0 = OptimizerState::new(Matrix::zeros(2, 2));
        let out = muon_step(&s0, &g, &hp(0.1, 1.0, 0.0)).unwrap();
        assert_eq!(out.new_state.w, Matrix::identity(2).scale(-0.1));
        assert_eq!(out.branch, Branch::Orthogonal);
        assert_eq!(out.new_state.t, 1);

        let s1 = OptimizerState::new(Matrix::identity(2));
        let out = muon_step(&s1, &g, &hp(0.1, 1.0, 0.5)).unwrap();
        assert!(out.new_state.w.sub(&Matrix::identity(2).scale(0.85)).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn muon_update_norm_bound() {
        let w = Matrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let g = Matrix::from_fn(4, 3, |i, j| ((i + 2 * j) as f64 * 1.3).cos());
        let h = hp(0.05, 0.9, 0.3);
        let out = muon_step(&OptimizerState::new(w.clone()), &g, &h).unwrap();
        let moved = out.new_state.w.sub(&w).unwrap().frobenius_norm();
        let bound = h.eta * (3f64.sqrt() + h.lambda * w.frobenius_norm());
        assert!(moved <= bound + 1e-15, "{moved} > {bound}");
    }

    #[test]
    fn sgdm_step_examples() {
        let out = sgdm_step(&OptimizerState::new(m1(0.0)), &m1(2.0), &hp(0.1, 1.0, 0.0)).unwrap();
        assert!((out.new_state.w[(0, 0)] + 0.2).abs() < 1e-16);
        assert_eq!(out.branch, Branch::Momentum);

        let w = Matrix::from_rows(&[[1.0, -3.0]]).unwrap();
        let h = hp(0.1, 0.5, 0.2);
        let out = sgdm_step(&OptimizerState::new(w.clone()), &Matrix::zeros(1, 2), &h).unwrap();
        assert_eq!(out.new_state.w, w.scale(1.0 - 0.1 * 0.2));

        let s = OptimizerState::with_momentum(m1(0.0), m1(2.0), 0).unwrap();
        let out = sgdm_step(&s, &m1(4.0), &hp(1.0, 0.5, 0.0)).unwrap();
        assert_eq!(out.new_state.w, m1(-3.0));
    }

    #[test]
    fn mimuon_branch_examples() {
        let s = OptimizerState::new(Matrix::zeros(2, 2));
        let g = diag(&[4.0, 1.0]);
        let mut h = hp(0.1, 1.0, 0.0);

        h.tau = 2.0;
        let out = mimuon_step(&s, &g, &h).unwrap();
        assert_eq!(out.branch, Branch::Orthogonal);
        assert_eq!(out.gap_value, 3.0);

        h.tau = 5.0;
        let out = mimuon_step(&s, &g, &h).unwrap();
        assert_eq!(out.branch, Branch::Momentum);
        assert_eq!(out.new_state.w, g.scale(-0.1));

        h.tau = 4.0;
        h.switch_mode = SwitchMode::FrobeniusProxy;
        let out = mimuon_step(&s, &g, &h).unwrap();
        assert_eq!(out.branch, Branch::Orthogonal);
        assert!((out.gap_value - 17f64.sqrt()).abs() < 1e-15);

        // Ties go to the orthogonal branch.
        h.tau = 17f64.sqrt();
        assert_eq!(mimuon_step(&s, &g, &h).unwrap().branch, Branch::Orthogonal);
    }

    #[test]
    fn musgd_examples() {
        let s = OptimizerState::new(Matrix::from_rows(&[[0.3, -0.2], [0.1, 0.5]]).unwrap());
        let g = Matrix::from_rows(&[[1.0, 2.0], [-0.5, 0.25]]).unwrap();
        let mut h = hp(0.1, 0.7, 0.1);

        h.musgd_w_mu = 1.0;
        h.musgd_w_sgd = 0.0;
        assert_eq!(
            musgd_step(&s, &g, &h).unwrap().new_state.w,
            muon_step(&s, &g, &h).unwrap().new_state.w
        );
        h.musgd_w_mu = 0.0;
        h.musgd_w_sgd = 1.0;
        assert_eq!(
            musgd_step(&s, &g, &h).unwrap().new_state.w,
            sgdm_step(&s, &g, &h).unwrap().new_state.w
        );

        let h = HyperParams {
            lambda: 0.0,
            ..hp(0.1, 1.0, 0.0)
        };
        let out = musgd_step(&OptimizerState::new(Matrix::zeros(2, 2)), &diag(&[4.0, 1.0]), &h).unwrap();
        assert!(out.new_state.w.sub(&diag(&[-0.23, -0.11])).unwrap().frobenius_norm() < 1e-15);
        assert_eq!(out.branch, Branch::Orthogonal);
    }

    #[test]
    fn zero_momentum_takes_a_null_step() {
        let s = OptimizerState::new(Matrix::identity(2));
        let out = muon_step(&s, &Matrix::zeros(2, 2), &hp(0.1, 1.0, 0.0)).unwrap();
        assert_eq!(out.new_state.w, Matrix::identity(2));
        assert!(out.update_direction.is_zero());
    }

    #[test]
    fn newton_schulz_mode_runs() {
        let mut h = hp(0.1, 1.0, 0.0);
        h.ortho_mode = OrthoMode::NewtonSchulz;
        h.switch_mode = SwitchMode::FrobeniusProxy;
        let out = muon_step(&OptimizerState::new(Matrix::zeros(2, 2)), &diag(&[4.0, 1.0]), &h).unwrap();
        let err = out.update_direction.sub(&Matrix::identity(2)).unwrap().frobenius_norm();
        assert!(err < 0.05);
    }

    #[test]
    fn validation() {
        assert!(HyperParams::default().validate().is_ok());
        assert!(hp(0.1, 0.0, 0.0).validate().is_err());
        assert!(hp(0.1, 1.5, 0.0).validate().is_err());
        assert!(hp(0.1, 0.5, 10.0).validate().is_err());
        assert!(hp(-0.1, 0.5, 0.0).validate().is_err());
        assert!(hp(0.0, 0.5, 3.0).validate().is_ok());
        let mut h = HyperParams::default();
        h.ns_steps = 0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn muon_convention_round_trip() {
        let h = HyperParams::from_muon_convention(0.02, 0.95);
        assert!((h.beta - 1.0 / 1.95).abs() < 1e-15);
        let (lr, mu) = h.muon_convention();
        assert!((lr - 0.02).abs() < 1e-15 && (mu - 0.95).abs() < 1e-12);
    }

    #[test]
    fn param_group_steps_members_independently() {
        let mut group = ParamGroup::new(OptimizerKind::Muon);
        group.push(Matrix::zeros(2, 2), hp(0.1, 1.0, 0.0)).unwrap();
        group.push(Matrix::zeros(3, 1), hp(0.2, 1.0, 0.0)).unwrap();
        let grads = [diag(&[4.0, 1.0]), Matrix::from_rows(&[[1.0], [0.0], [0.0]]).unwrap()];
        let out = group.step(&grads).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(group.members[0].0.w, Matrix::identity(2).scale(-0.1));
        assert_eq!(group.members[1].0.w[(0, 0)], -0.2);
        assert!(group.step(&grads[..1]).is_err());
        // Shape mismatch leaves every member untouched.
        let before = group.members.clone();
        assert!(group.step(&[grads[1].clone(), grads[0].clone()]).is_err());
        assert_eq!(group.members[0].0, before[0].0);
    }

    fn small_matrix() -> impl Strategy<Value = Matrix> {
        (1usize..5, 1usize..5).prop_flat_map(|(r, c)| {
            prop::collection::vec(-3.0f64..3.0, r * c)
                .prop_map(move |d| Matrix::new(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn orthogonal_update_has_norm_sqrt_rank(m in small_matrix()) {
            prop_assume!(!m.is_zero());
            let s = OptimizerState::new(Matrix::zeros(m.rows(), m.cols()));
            let out = muon_step(&s, &m, &hp(0.1, 1.0, 0.0)).unwrap();
            let f = svd(&m).unwrap();
            let rank = f.numerical_rank(zero_tol_for(&m)) as f64;
            prop_assert!((out.update_direction.frobenius_norm() - rank.sqrt()).abs() <= 1e-8);
        }

        #[test]
        fn momentum_is_a_convex_combination(
            (mp, g) in small_matrix().prop_flat_map(|m| {
                let (r, c) = m.shape();
                (Just(m), prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap()))
            }),
            beta in 0.01f64..=1.0,
        ) {
            let m_new = momentum_update(&mp, &g, beta).unwrap();
            prop_assert!(m_new.frobenius_norm()
                <= beta * g.frobenius_norm() + (1.0 - beta) * mp.frobenius_norm() + 1e-12);
        }

        #[test]
        fn steps_are_deterministic(m in small_matrix(), tau in 0.0f64..3.0) {
            let s = OptimizerState::new(m.scale(0.5));
            let mut h = hp(0.05, 0.6, 0.1);
            h.tau = tau;
            let a = mimuon_step(&s, &m, &h).unwrap();
            let b = mimuon_step(&s, &m, &h).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
