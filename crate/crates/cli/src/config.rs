//! Experiment configuration files.
//!
//! A config is one JSON object with the sections `problem`, `data`,
//! `optimizer`, `run` and `experiment`. Unknown keys are rejected everywhere.
//! Optimizer fields fall back to the library defaults; seeds have no defaults.
//!
//! ```json
//! {
//!   "problem":   { "kind": "matrix_regression", "m": 8, "n": 4, "noise_sigma": 0.1, "gt_seed": 1 },
//!   "data":      { "n_samples": 100, "data_seed": 2 },
//!   "optimizer": { "name": "mimuon", "eta": 0.01, "tau": 0.01 },
//!   "run":       { "steps": 500, "index_seed": 3, "seeds": [0, 1] },
//!   "experiment": { "type": "train" }
//! }
//! ```
//!
//! A `summary.json` written by any command is also accepted: its embedded
//! `resolved_config` is used.

use std::path::Path;

use serde::{Deserialize, Serialize};

use matmuon::experiments::{Batch, RunConfig};
use matmuon::linalg::{Matrix, NsCoeffs};
use matmuon::problems::{ProblemKind, ProblemSpec, Xoshiro256pp};
use matmuon::{HyperParams, OptimizerKind, OrthoMode, SwitchMode};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub data: DataSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    pub run: RunSection,
    pub experiment: ExperimentSection,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub m: usize,
    pub n: usize,
    pub noise_sigma: f64,
    pub gt_seed: u64,
    /// Ground-truth entries are `N(0, gt_scale^2 / n)`.
    #[serde(default = "one")]
    pub gt_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_samples: usize,
    pub data_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub name: OptimizerKind,
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

impl Default for OptimizerSection {
    fn default() -> Self {
        let hp = HyperParams::default();
        Self {
            name: OptimizerKind::MiMuon,
            eta: hp.eta,
            beta: hp.beta,
            lambda: hp.lambda,
            tau: hp.tau,
            switch_mode: hp.switch_mode,
            ortho_mode: hp.ortho_mode,
            ns_steps: hp.ns_steps,
            ns_coeffs: hp.ns_coeffs,
            musgd_w_mu: hp.musgd_w_mu,
            musgd_w_sgd: hp.musgd_w_sgd,
        }
    }
}

impl OptimizerSection {
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            eta: self.eta,
            beta: self.beta,
            lambda: self.lambda,
            tau: self.tau,
            switch_mode: self.switch_mode,
            ortho_mode: self.ortho_mode,
            ns_steps: self.ns_steps,
            ns_coeffs: self.ns_coeffs,
            musgd_w_mu: self.musgd_w_mu,
            musgd_w_sgd: self.musgd_w_sgd,
        }
    }
}

/// Initial iterate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum W0Spec {
    #[default]
    Zeros,
    /// Gaussian direction rescaled to Frobenius norm `norm`.
    Random { seed: u64, norm: f64 },
    /// Explicit rows.
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub steps: usize,
    pub index_seed: u64,
    /// Each seed re-derives the data and index seeds; an empty list runs the
    /// configured seeds once.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub w0: W0Spec,
    #[serde(default)]
    pub lemma_mode: bool,
    #[serde(default)]
    pub batch: Batch,
}

fn default_max_dim() -> usize {
    8
}

fn default_delta_scale() -> f64 {
    0.01
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSection {
    Train,
    Stability {
        #[serde(default)]
        replace_index: usize,
        replacement_seed: u64,
        /// Replace the sample by itself: both runs must coincide.
        #[serde(default)]
        identical_replacement: bool,
        /// Also run the Muon-vs-MiMuon replace-one campaign.
        #[serde(default = "default_true")]
        compare: bool,
    },
    Probe {
        pairs: usize,
        seed: u64,
        #[serde(default = "default_max_dim")]
        max_dim: usize,
        /// `||Delta|| <= delta_scale * kappa`; 0 gives zero perturbations.
        #[serde(default = "default_delta_scale")]
        delta_scale: f64,
    },
    Convergence {
        horizons: Vec<usize>,
        #[serde(default = "one")]
        c: f64,
    },
    Sweep {
        taus: Vec<f64>,
    },
}

impl ExperimentSection {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentSection::Train => "train",
            ExperimentSection::Stability { .. } => "stability",
            ExperimentSection::Probe { .. } => "probe",
            ExperimentSection::Convergence { .. } => "convergence",
            ExperimentSection::Sweep { .. } => "sweep",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg: Self = match value {
            serde_json::Value::Object(mut map) if map.contains_key("resolved_config") => {
                let inner = map.remove("resolved_config").expect("key present");
                serde_json::from_value(inner)
                    .map_err(|e| CliError::Config(format!("resolved_config: {e}")))?
            }
            // Parsed from text so diagnostics carry line and column.
            _ => serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.problem.m == 0 || self.problem.n == 0 {
            return bad("problem.m and problem.n must be positive".into());
        }
        if let W0Spec::Explicit(rows) = &self.run.w0 {
            if rows.len() != self.problem.m || rows.iter().any(|r| r.len() != self.problem.n) {
                return bad(format!(
                    "run.w0 must be {}x{}",
                    self.problem.m, self.problem.n
                ));
            }
        }
        match &self.experiment {
            ExperimentSection::Sweep { taus } if taus.is_empty() => bad("experiment.taus is empty".into()),
            ExperimentSection::Probe { pairs: 0, .. } => bad("experiment.pairs must be >= 1".into()),
            ExperimentSection::Stability { replace_index, .. } if *replace_index >= self.data.n_samples => bad(
                format!("experiment.replace_index {replace_index} >= data.n_samples"),
            ),
            _ => Ok(()),
        }?;
        self.run_config()?.validate()?;
        Ok(())
    }

    pub fn w0(&self) -> Result<Matrix> {
        let (m, n) = (self.problem.m, self.problem.n);
        Ok(match &self.run.w0 {
            W0Spec::Zeros => Matrix::zeros(m, n),
            W0Spec::Random { seed, norm } => {
                let mut rng = Xoshiro256pp::seed_from_u64(*seed);
                let dir = Matrix::new(m, n, rng.normals(m * n))?;
                dir.scale(norm / dir.frobenius_norm())
            }
            W0Spec::Explicit(rows) => Matrix::from_rows(rows)?,
        })
    }

    /// The library run configuration with the configured (non-derived) seeds.
    pub fn run_config(&self) -> Result<RunConfig> {
        let p = &self.problem;
        let problem = ProblemSpec::with_random_ground_truth(p.kind, p.m, p.n, p.noise_sigma, p.gt_seed, p.gt_scale)?;
        Ok(RunConfig {
            problem,
            n_samples: self.data.n_samples,
            steps: self.run.steps,
            optimizer: self.optimizer.name,
            hp: self.optimizer.hyper_params(),
            w0: self.w0()?,
            data_seed: self.data.data_seed,
            index_seed: self.run.index_seed,
            batch: self.run.batch,
            lemma_mode: self.run.lemma_mode,
        })
    }

    /// `(label, config)` per seed; a single unlabeled run when `seeds` is empty.
    pub fn seeded_runs(&self) -> Result<Vec<(Option<u64>, RunConfig)>> {
        let base = self.run_config()?;
        if self.run.seeds.is_empty() {
            return Ok(vec![(None, base)]);
        }
        Ok(self.run.seeds.iter().map(|&s| (Some(s), base.with_seed(s))).collect())
    }

    /// Seeds for campaign commands; `[0]` when none are listed.
    pub fn campaign_seeds(&self) -> Vec<u64> {
        if self.run.seeds.is_empty() {
            vec![0]
        } else {
            self.run.seeds.clone()
        }
    }
}
