//! Experiment harnesses built on [`crate::optim`] and [`crate::problems`].
//!
//! Every harness is a deterministic function of its configuration and seeds:
//! datasets come from `data_seed`, sample indices from `index_seed`, and
//! parallel campaigns collect their results in input order.

mod bounds;
mod convergence;
mod probe;
mod stability;
mod sweep;

pub use bounds::{
    estimate_constants, lemma_bound_check, momentum_error_track, stability_bound_recursion,
    BoundConstants, BoundVariant, LemmaReport, MomentumErrorReport,
};
pub use convergence::{convergence_campaign, convergence_rate_fit, RateFit, RatePoint, Schedule};
pub use probe::{davis_kahan_campaign, davis_kahan_probe, ProbeCampaign, ProbeRecord};
pub use stability::{
    replace_one_divergences, stability_pair_run, stability_pair_run_on, StabilityRecord,
    StabilityTrace,
};
pub use sweep::{tau_sweep, SweepRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{singular_gap, svd, zero_tol_for, Matrix};
use crate::optim::{Branch, HyperParams, OptimizerKind, OptimizerState, StepOutcome, SwitchMode};
use crate::problems::{
    derive_seed, empirical_loss_and_grad, generate_dataset, grad, Dataset, ProblemSpec, Xoshiro256pp,
};

/// How many samples each step consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    /// One uniformly drawn sample per step.
    #[default]
    Single,
    /// `k` independent uniform draws per step.
    MiniBatch(usize),
    /// The whole dataset every step; consumes no randomness.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub n_samples: usize,
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub hp: HyperParams,
    pub w0: Matrix,
    pub data_seed: u64,
    pub index_seed: u64,
    #[serde(default)]
    pub batch: Batch,
    /// Marks the run as intended to satisfy the iterate-bound preconditions;
    /// [`lemma_bound_check`] refuses traces without it.
    #[serde(default)]
    pub lemma_mode: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.n_samples < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 samples, got {}",
                self.n_samples
            )));
        }
        if self.w0.shape() != (self.problem.m, self.problem.n) {
            return Err(Error::shape((self.problem.m, self.problem.n), self.w0.shape()));
        }
        if let Batch::MiniBatch(0) = self.batch {
            return Err(Error::InvalidInput("mini-batch size must be >= 1".into()));
        }
        Ok(())
    }

    /// Same configuration with data and index seeds re-derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            data_seed: derive_seed(self.data_seed, seed),
            index_seed: derive_seed(self.index_seed, seed),
            ..self.clone()
        }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        generate_dataset(&self.problem, self.n_samples, self.data_seed)
    }

    pub fn index_stream(&self) -> IndexStream {
        IndexStream::new(self.index_seed, self.n_samples, self.batch)
    }
}

/// The sample indices consumed step by step. For [`Batch::Single`] this is
/// exactly [`crate::problems::sample_index_sequence`].
#[derive(Debug, Clone)]
pub struct IndexStream {
    rng: Xoshiro256pp,
    n: usize,
    batch: Batch,
}

impl IndexStream {
    pub fn new(seed: u64, n_samples: usize, batch: Batch) -> Self {
        Self {
            rng: Xoshiro256pp::seed_from_u64(seed),
            n: n_samples,
            batch,
        }
    }

    /// Replaces `out` with the next step's indices.
    pub fn next_into(&mut self, out: &mut Vec<usize>) {
        out.clear();
        match self.batch {
            Batch::Single => out.push(self.rng.index(self.n)),
            Batch::MiniBatch(k) => out.extend((0..k).map(|_| self.rng.index(self.n))),
            Batch::Full => out.extend(0..self.n),
        }
    }
}

/// One row of a training trace. Row `t` describes `W_t` and `M_t`; row 0 is
/// the initial point, with no branch and zero momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    /// `F_S(W_t)`.
    pub loss: f64,
    /// `||grad F_S(W_t)||_F`.
    pub grad_norm: f64,
    pub mom_norm: f64,
    /// Singular gap of `M_t`; infinite when fewer than two non-zero
    /// singular values exist.
    pub kappa: f64,
    pub branch: Option<Branch>,
    /// `||W_t - W_{t-1}||_F`.
    pub step_norm: f64,
    pub w_norm: f64,
    /// Largest per-sample gradient norm among the samples consumed at step `t`.
    pub sample_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    /// `W_0, ..., W_T`.
    pub iterates: Vec<Matrix>,
    /// Entry `t` is `||grad F_S(W_t) - M_{t+1}||_F`, for `t < T`.
    pub momentum_errors: Vec<f64>,
    pub final_state: OptimizerState,
    pub hp: HyperParams,
    pub lemma_mode: bool,
}

impl ConvergenceTrace {
    pub fn steps(&self) -> usize {
        self.records.len() - 1
    }

    /// `(1 / (T + 1)) sum_t ||grad F_S(W_t)||_F`.
    pub fn avg_grad_norm(&self) -> f64 {
        self.records.iter().map(|r| r.grad_norm).sum::<f64>() / self.records.len() as f64
    }

    /// Fraction of steps that took the orthogonal branch; 0 for `T = 0`.
    pub fn ortho_fraction(&self) -> f64 {
        if self.steps() == 0 {
            return 0.0;
        }
        let n = self
            .records
            .iter()
            .filter(|r| r.branch == Some(Branch::Orthogonal))
            .count();
        n as f64 / self.steps() as f64
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Singular gap of `m` under the relative zero threshold.
pub fn exact_gap(m: &Matrix) -> Result<f64> {
    let f = svd(m)?;
    singular_gap(&f.sigma, zero_tol_for(m))
}

/// Mean stochastic gradient over `batch` and the largest per-sample norm.
pub(crate) fn batch_grad(
    spec: &ProblemSpec,
    w: &Matrix,
    data: &Dataset,
    batch: &[usize],
) -> Result<(Matrix, f64)> {
    let mut acc: Option<Matrix> = None;
    let mut max_norm: f64 = 0.0;
    for &i in batch {
        let g = grad(spec, w, &data.samples[i])?;
        max_norm = max_norm.max(g.frobenius_norm());
        acc = Some(match acc {
            None => g,
            Some(a) => a.zip_map(&g, |x, y| x + y),
        });
    }
    let g = acc.ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    // Divide rather than scale so a full batch matches the empirical mean bit for bit.
    let k = batch.len() as f64;
    let g = g.map(|v| v / k);
    Ok((g, max_norm))
}

/// One optimizer step on the samples `batch`.
pub(crate) fn step_on(
    cfg: &RunConfig,
    data: &Dataset,
    state: &OptimizerState,
    batch: &[usize],
) -> Result<(StepOutcome, f64)> {
    let t = state.t + 1;
    let (g, gmax) = batch_grad(&cfg.problem, &state.w, data, batch)?;
    if !g.is_finite() {
        return Err(Error::DivergenceDetected(t));
    }
    let out = cfg.optimizer.step(state, &g, &cfg.hp).map_err(|e| match e {
        Error::InvalidMatrix(_) => Error::DivergenceDetected(t),
        other => other,
    })?;
    if !(out.new_state.w.is_finite() && out.new_state.m.is_finite()) {
        return Err(Error::DivergenceDetected(t));
    }
    Ok((out, gmax))
}

/// The singular gap of the momentum after a step: reused from the step when
/// it was the decision value.
pub(crate) fn step_kappa(cfg: &RunConfig, out: &StepOutcome) -> Result<f64> {
    match cfg.hp.switch_mode {
        SwitchMode::ExactGap => Ok(out.gap_value),
        SwitchMode::FrobeniusProxy => exact_gap(&out.new_state.m),
    }
}

/// Runs `cfg.steps` optimizer steps on the dataset generated from
/// `cfg.data_seed`.
pub fn run_training(cfg: &RunConfig) -> Result<ConvergenceTrace> {
    cfg.validate()?;
    let data = cfg.dataset()?;
    run_training_on(cfg, &data)
}

/// [`run_training`] on a caller-supplied dataset.
pub fn run_training_on(cfg: &RunConfig, data: &Dataset) -> Result<ConvergenceTrace> {
    cfg.validate()?;
    let spec = &cfg.problem;
    let mut state = OptimizerState::new(cfg.w0.clone());
    let (loss0, g0) = empirical_loss_and_grad(spec, &state.w, data)?;
    let mut records = Vec::with_capacity(cfg.steps + 1);
    records.push(TraceRecord {
        t: 0,
        loss: loss0,
        grad_norm: g0.frobenius_norm(),
        mom_norm: 0.0,
        kappa: f64::INFINITY,
        branch: None,
        step_norm: 0.0,
        w_norm: state.w.frobenius_norm(),
        sample_grad_norm: 0.0,
    });
    let mut iterates = Vec::with_capacity(cfg.steps + 1);
    iterates.push(state.w.clone());
    let mut momentum_errors = Vec::with_capacity(cfg.steps);
    let mut full_grad = g0;

    let mut stream = cfg.index_stream();
    let mut batch = Vec::new();
    for _ in 0..cfg.steps {
        stream.next_into(&mut batch);
        let (out, gmax) = step_on(cfg, data, &state, &batch)?;
        let t = out.new_state.t;
        momentum_errors.push(full_grad.sub(&out.new_state.m)?.frobenius_norm());
        let kappa = step_kappa(cfg, &out)?;
        let (loss, g) = empirical_loss_and_grad(spec, &out.new_state.w, data)?;
        if !(loss.is_finite() && g.is_finite()) {
            return Err(Error::DivergenceDetected(t));
        }
        records.push(TraceRecord {
            t,
            loss,
            grad_norm: g.frobenius_norm(),
            mom_norm: out.new_state.m.frobenius_norm(),
            kappa,
            branch: Some(out.branch),
            step_norm: out.new_state.w.sub(&state.w)?.frobenius_norm(),
            w_norm: out.new_state.w.frobenius_norm(),
            sample_grad_norm: gmax,
        });
        iterates.push(out.new_state.w.clone());
        full_grad = g;
        state = out.new_state;
    }
    Ok(ConvergenceTrace {
        records,
        iterates,
        momentum_errors,
        final_state: state,
        hp: cfg.hp.clone(),
        lemma_mode: cfg.lemma_mode,
    })
}

/// `F_{S'}(W) - F_S(W)` with `S'` an independent dataset of `10 N` samples
/// standing in for the population.
pub fn generalization_gap(cfg: &RunConfig, data: &Dataset, w: &Matrix) -> Result<f64> {
    let holdout = generate_dataset(
        &cfg.problem,
        10 * cfg.n_samples,
        derive_seed(cfg.data_seed, 0x686f_6c64),
    )?;
    let (train, _) = empirical_loss_and_grad(&cfg.problem, w, data)?;
    let (pop, _) = empirical_loss_and_grad(&cfg.problem, w, &holdout)?;
    Ok(pop - train)
}

/// Median of a non-empty slice; NaN-free inputs assumed.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemKind;

    pub(crate) fn small_cfg(kind: ProblemKind, optimizer: OptimizerKind, steps: usize) -> RunConfig {
        let problem = ProblemSpec::with_random_ground_truth(kind, 3, 4, 0.1, 1, 1.0).unwrap();
        RunConfig {
            problem,
            n_samples: 20,
            steps,
            optimizer,
            hp: HyperParams {
                eta: 0.05,
                beta: 0.5,
                ..HyperParams::default()
            },
            w0: Matrix::zeros(3, 4),
            data_seed: 3,
            index_seed: 4,
            batch: Batch::Single,
            lemma_mode: false,
        }
    }

    #[test]
    fn zero_steps_gives_initial_point() {
        let cfg = small_cfg(ProblemKind::MatrixRegression, OptimizerKind::MiMuon, 0);
        let tr = run_training(&cfg).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.records[0].t, 0);
        assert_eq!(tr.iterates, vec![cfg.w0.clone()]);
        assert_eq!(tr.ortho_fraction(), 0.0);
    }

    #[test]
    fn zero_learning_rate_freezes_iterates() {
        let mut cfg = small_cfg(ProblemKind::TanhRegression, OptimizerKind::Muon, 30);
        cfg.hp.eta = 0.0;
        cfg.w0 = Matrix::from_fn(3, 4, |i, j| 0.1 * (i + j) as f64);
        let tr = run_training(&cfg).unwrap();
        assert!(tr.iterates.iter().all(|w| *w == cfg.w0));
        assert!(tr.records.iter().all(|r| r.grad_norm == tr.records[0].grad_norm));
    }

    #[test]
    fn sgdm_descends_on_noiseless_regression() {
        let mut cfg = small_cfg(ProblemKind::MatrixRegression, OptimizerKind::Sgdm, 300);
        cfg.problem.noise_sigma = 0.0;
        cfg.hp.eta = 0.01;
        let tr = run_training(&cfg).unwrap();
        assert!(tr.final_loss() < tr.records[0].loss);
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        for kind in [OptimizerKind::Sgdm, OptimizerKind::Muon, OptimizerKind::MiMuon, OptimizerKind::MuSgd] {
            let cfg = small_cfg(ProblemKind::TanhRegression, kind, 50);
            assert_eq!(run_training(&cfg).unwrap(), run_training(&cfg).unwrap());
        }
    }

    #[test]
    fn full_batch_consumes_every_sample() {
        let mut s = IndexStream::new(1, 5, Batch::Full);
        let mut out = Vec::new();
        s.next_into(&mut out);
        assert_eq!(out, vec![0, 1, 2, 3, 4]);
        let mut s = IndexStream::new(1, 5, Batch::MiniBatch(3));
        s.next_into(&mut out);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn single_stream_matches_index_sequence() {
        let seq = crate::problems::sample_index_sequence(9, 13, 40);
        let mut s = IndexStream::new(9, 13, Batch::Single);
        let mut out = Vec::new();
        let streamed: Vec<usize> = (0..40)
            .map(|_| {
                s.next_into(&mut out);
                out[0]
            })
            .collect();
        assert_eq!(streamed, seq);
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = small_cfg(ProblemKind::MatrixRegression, OptimizerKind::Sgdm, 400);
        cfg.hp.eta = 50.0;
        cfg.hp.beta = 1.0;
        assert!(matches!(run_training(&cfg), Err(Error::DivergenceDetected(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = small_cfg(ProblemKind::MatrixRegression, OptimizerKind::Sgdm, 1);
        cfg.w0 = Matrix::zeros(2, 2);
        assert!(matches!(run_training(&cfg), Err(Error::Shape { .. })));
        let mut cfg = small_cfg(ProblemKind::MatrixRegression, OptimizerKind::Sgdm, 1);
        cfg.n_samples = 1;
        assert!(run_training(&cfg).is_err());
    }

    #[test]
    fn generalization_gap_is_finite() {
        let cfg = small_cfg(ProblemKind::MatrixRegression, OptimizerKind::MiMuon, 100);
        let data = cfg.dataset().unwrap();
        let tr = run_training_on(&cfg, &data).unwrap();
        assert!(generalization_gap(&cfg, &data, &tr.final_state.w).unwrap().is_finite());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
