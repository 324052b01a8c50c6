//! Threshold sweeps for MiMuon.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{replace_one_divergences, run_training, RunConfig};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::problems::derive_seed;

/// Stream tag for the replacement samples of a sweep.
const REPLACEMENT_STREAM: u64 = 0x7377_6565_70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub seed: u64,
    /// `F_S(W_T)`.
    pub final_loss: f64,
    /// Mean over replace indices of the final `||W_T - W_T^(i)||_F`.
    pub final_div: f64,
    pub ortho_fraction: f64,
}

/// Runs MiMuon (whatever `cfg.optimizer` says) for every `(tau, seed)`, rows
/// ordered by `tau` then seed.
pub fn tau_sweep(cfg: &RunConfig, taus: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if taus.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidInput("tau sweep needs at least one tau and one seed".into()));
    }
    let jobs: Vec<(f64, u64)> = taus
        .iter()
        .flat_map(|&tau| seeds.iter().map(move |&s| (tau, s)))
        .collect();
    jobs.par_iter()
        .map(|&(tau, seed)| {
            let mut c = cfg.with_seed(seed);
            c.optimizer = OptimizerKind::MiMuon;
            c.hp.tau = tau;
            let trace = run_training(&c)?;
            let divs = replace_one_divergences(&c, derive_seed(c.index_seed, REPLACEMENT_STREAM))?;
            Ok(SweepRow {
                tau,
                seed,
                final_loss: trace.final_loss(),
                final_div: divs.iter().sum::<f64>() / divs.len() as f64,
                ortho_fraction: trace.ortho_fraction(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::Batch;
    use crate::linalg::Matrix;
    use crate::optim::{HyperParams, SwitchMode};
    use crate::problems::{ProblemKind, ProblemSpec};

    fn cfg() -> RunConfig {
        RunConfig {
            problem: ProblemSpec::with_random_ground_truth(ProblemKind::TanhRegression, 3, 4, 0.1, 4, 1.0)
                .unwrap(),
            n_samples: 10,
            steps: 30,
            optimizer: OptimizerKind::Sgdm,
            hp: HyperParams {
                eta: 0.05,
                beta: 0.5,
                switch_mode: SwitchMode::FrobeniusProxy,
                ..HyperParams::default()
            },
            w0: Matrix::zeros(3, 4),
            data_seed: 1,
            index_seed: 2,
            batch: Batch::Single,
            lemma_mode: false,
        }
    }

    #[test]
    fn endpoints() {
        let rows = tau_sweep(&cfg(), &[0.0, 1e9], &[1, 2]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].ortho_fraction, 1.0);
        assert_eq!(rows[1].ortho_fraction, 1.0);
        assert_eq!(rows[2].ortho_fraction, 0.0);
        assert_eq!((rows[2].tau, rows[3].seed), (1e9, 2));
    }

    #[test]
    fn paper_grid_table() {
        let grid = [0.002, 0.005, 0.01, 0.02];
        let rows = tau_sweep(&cfg(), &grid, &[7]).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.final_loss.is_finite() && r.final_div >= 0.0));
        assert!(tau_sweep(&cfg(), &[], &[1]).is_err());
    }
}
