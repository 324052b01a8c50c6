//! Replace-one stability runs: the same optimizer on `S` and on its neighbor
//! `S^(i)`, driven by one shared index sequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bounds::estimate_constants_from;
use super::{step_kappa, step_on, stability_bound_recursion, BoundConstants, BoundVariant, RunConfig};
use crate::error::Result;
use crate::optim::{Branch, OptimizerState};
use crate::problems::{derive_seed, Dataset, NeighborSpec, Xoshiro256pp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub t: usize,
    /// `||W_t - W_t^(i)||_F`.
    pub param_div: f64,
    /// `||M_t - M_t^(i)||_F`.
    pub mom_div: f64,
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub branch_a: Option<Branch>,
    pub branch_b: Option<Branch>,
    pub psi: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityTrace {
    pub records: Vec<StabilityRecord>,
    pub replace_index: usize,
    /// Indices consumed by the run on `S`, in order.
    pub consumed_a: Vec<usize>,
    /// Indices consumed by the run on `S^(i)`, in order.
    pub consumed_b: Vec<usize>,
    pub constants: BoundConstants,
    pub variant: BoundVariant,
    pub kappa_floor: f64,
    /// Set when the bound recursion left the finite range.
    pub bound_overflow: bool,
}

impl StabilityTrace {
    pub fn final_param_div(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.param_div)
    }
}

/// Pairs `cfg` on its dataset and on the neighbor whose `replace_index`-th
/// sample is a fresh draw from `replacement_seed`.
///
/// Without supplied constants they are estimated along the run on `S` and
/// inflated by 2. The recursion variant follows the smallest singular gap
/// seen on an orthogonal step of either run, capped at 1: with no gap below 1
/// the [`BoundVariant::MiMuonBound`] coupling applies, otherwise
/// [`BoundVariant::MuonBound`] with that gap as `kappa_floor`.
pub fn stability_pair_run(
    cfg: &RunConfig,
    replace_index: usize,
    replacement_seed: u64,
    constants: Option<&BoundConstants>,
) -> Result<StabilityTrace> {
    cfg.validate()?;
    let data = cfg.dataset()?;
    let nb = NeighborSpec::fresh(&cfg.problem, data, replace_index, replacement_seed)?;
    stability_pair_run_on(cfg, &nb, constants)
}

/// [`stability_pair_run`] for an explicit neighbor.
pub fn stability_pair_run_on(
    cfg: &RunConfig,
    nb: &NeighborSpec,
    constants: Option<&BoundConstants>,
) -> Result<StabilityTrace> {
    cfg.validate()?;
    let data_a = &nb.base;
    let data_b = nb.dataset();
    let mut a = OptimizerState::new(cfg.w0.clone());
    let mut b = a.clone();
    let mut stream_a = cfg.index_stream();
    let mut stream_b = cfg.index_stream();
    let (mut batch_a, mut batch_b) = (Vec::new(), Vec::new());
    let (mut consumed_a, mut consumed_b) = (Vec::new(), Vec::new());

    let mut records = vec![StabilityRecord {
        t: 0,
        param_div: 0.0,
        mom_div: 0.0,
        kappa_a: f64::INFINITY,
        kappa_b: f64::INFINITY,
        branch_a: None,
        branch_b: None,
        psi: 0.0,
        phi: 0.0,
    }];
    let mut iterates = vec![a.w.clone()];
    let mut grad_max: f64 = 0.0;
    let mut kappa_floor: f64 = 1.0;

    for _ in 0..cfg.steps {
        stream_a.next_into(&mut batch_a);
        stream_b.next_into(&mut batch_b);
        consumed_a.extend_from_slice(&batch_a);
        consumed_b.extend_from_slice(&batch_b);
        let (out_a, ga) = step_on(cfg, data_a, &a, &batch_a)?;
        let (out_b, _) = step_on(cfg, &data_b, &b, &batch_b)?;
        grad_max = grad_max.max(ga);
        let (ka, kb) = (step_kappa(cfg, &out_a)?, step_kappa(cfg, &out_b)?);
        for (k, br) in [(ka, out_a.branch), (kb, out_b.branch)] {
            if br == Branch::Orthogonal {
                kappa_floor = kappa_floor.min(k);
            }
        }
        records.push(StabilityRecord {
            t: out_a.new_state.t,
            param_div: out_a.new_state.w.sub(&out_b.new_state.w)?.frobenius_norm(),
            mom_div: out_a.new_state.m.sub(&out_b.new_state.m)?.frobenius_norm(),
            kappa_a: ka,
            kappa_b: kb,
            branch_a: Some(out_a.branch),
            branch_b: Some(out_b.branch),
            psi: 0.0,
            phi: 0.0,
        });
        iterates.push(out_a.new_state.w.clone());
        a = out_a.new_state;
        b = out_b.new_state;
    }

    let constants = match constants {
        Some(c) => *c,
        None => estimate_constants_from(&cfg.problem, data_a, &iterates, grad_max)?.inflated(2.0),
    };
    let variant = if kappa_floor < 1.0 {
        BoundVariant::MuonBound
    } else {
        BoundVariant::MiMuonBound
    };
    let mut bound_overflow = false;
    if cfg.steps > 0 {
        let (psi, phi) = stability_bound_recursion(
            &constants,
            &cfg.hp,
            cfg.n_samples,
            cfg.steps,
            // A zero gap on an orthogonal step leaves no finite bound.
            kappa_floor.max(f64::MIN_POSITIVE),
            variant,
        )?;
        for (r, (p, f)) in records[1..].iter_mut().zip(psi.into_iter().zip(phi)) {
            r.psi = p;
            r.phi = f;
            bound_overflow |= !f.is_finite();
        }
    }
    Ok(StabilityTrace {
        records,
        replace_index: nb.replace_index,
        consumed_a,
        consumed_b,
        constants,
        variant,
        kappa_floor,
        bound_overflow,
    })
}

/// Final `||W_T - W_T^(i)||_F` for every replace index `i`, where the `i`-th
/// replacement is drawn from `derive_seed(replacement_seed, i)`.
///
/// Entry `i` equals the final divergence of
/// `stability_pair_run(cfg, i, derive_seed(replacement_seed, i), _)`. The two
/// runs coincide until index `i` is first consumed, so each neighbor is
/// restarted from the shared trajectory at that step; indices never consumed
/// give exactly 0.
pub fn replace_one_divergences(cfg: &RunConfig, replacement_seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let data = cfg.dataset()?;
    let mut stream = cfg.index_stream();
    let mut states = Vec::with_capacity(cfg.steps + 1);
    let mut batches = Vec::with_capacity(cfg.steps);
    let mut state = OptimizerState::new(cfg.w0.clone());
    for _ in 0..cfg.steps {
        let mut batch = Vec::new();
        stream.next_into(&mut batch);
        let (out, _) = step_on(cfg, &data, &state, &batch)?;
        states.push(state);
        batches.push(batch);
        state = out.new_state;
    }
    let final_w = state.w;

    (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let Some(first) = batches.iter().position(|b| b.contains(&i)) else {
                return Ok(0.0);
            };
            let mut rng = Xoshiro256pp::seed_from_u64(derive_seed(replacement_seed, i as u64));
            let mut data_b: Dataset = data.clone();
            data_b.samples[i] = cfg.problem.draw_sample(&mut rng, i);
            let mut s = states[first].clone();
            for batch in &batches[first..] {
                s = step_on(cfg, &data_b, &s, batch)?.0.new_state;
            }
            Ok(final_w.sub(&s.w)?.frobenius_norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::Batch;
    use crate::linalg::Matrix;
    use crate::optim::{HyperParams, OptimizerKind};
    use crate::problems::{ProblemKind, ProblemSpec};

    fn cfg(optimizer: OptimizerKind, beta: f64, steps: usize) -> RunConfig {
        RunConfig {
            problem: ProblemSpec::with_random_ground_truth(ProblemKind::MatrixRegression, 3, 4, 0.1, 8, 1.0)
                .unwrap(),
            n_samples: 12,
            steps,
            optimizer,
            hp: HyperParams {
                eta: 0.05,
                beta,
                ..HyperParams::default()
            },
            w0: Matrix::zeros(3, 4),
            data_seed: 5,
            index_seed: 6,
            batch: Batch::Single,
            lemma_mode: false,
        }
    }

    #[test]
    fn identical_replacement_gives_zero_divergence() {
        let c = cfg(OptimizerKind::MiMuon, 0.5, 60);
        let data = c.dataset().unwrap();
        let same = data.samples[3].clone();
        let nb = NeighborSpec::new(data, 3, same).unwrap();
        let tr = stability_pair_run_on(&c, &nb, None).unwrap();
        assert!(tr.records.iter().all(|r| r.param_div == 0.0 && r.mom_div == 0.0));
    }

    #[test]
    fn unconsumed_index_keeps_runs_together() {
        for beta in [1.0, 0.4] {
            let c = cfg(OptimizerKind::Muon, beta, 25);
            let probe = stability_pair_run(&c, 0, 1, None).unwrap();
            let unused = (0..c.n_samples).find(|i| !probe.consumed_a.contains(i)).unwrap();
            let tr = stability_pair_run(&c, unused, 99, None).unwrap();
            assert!(tr.records.iter().all(|r| r.param_div == 0.0));
        }
    }

    #[test]
    fn shared_index_streams() {
        let c = cfg(OptimizerKind::MiMuon, 0.5, 40);
        let tr = stability_pair_run(&c, 2, 3, None).unwrap();
        assert_eq!(tr.consumed_a.len(), 40);
        assert_eq!(tr.consumed_a, tr.consumed_b);
        assert_eq!(tr.records[0].param_div, 0.0);
        assert_eq!(tr.records.len(), 41);
    }

    #[test]
    fn restarted_neighbors_match_full_pair_runs() {
        for opt in [OptimizerKind::Muon, OptimizerKind::MiMuon, OptimizerKind::Sgdm] {
            let c = cfg(opt, 0.5, 40);
            let fast = replace_one_divergences(&c, 17).unwrap();
            for (i, d) in fast.iter().enumerate() {
                let full = stability_pair_run(&c, i, derive_seed(17, i as u64), None).unwrap();
                assert_eq!(*d, full.final_param_div(), "{opt:?} index {i}");
            }
        }
    }

    #[test]
    fn bound_variant_follows_observed_gaps() {
        let c = cfg(OptimizerKind::Sgdm, 0.5, 30);
        let tr = stability_pair_run(&c, 1, 2, None).unwrap();
        assert_eq!(tr.variant, BoundVariant::MiMuonBound);
        assert!(tr.records[1..].iter().all(|r| r.phi > 0.0));

        let c = cfg(OptimizerKind::Muon, 0.5, 30);
        let tr = stability_pair_run(&c, 1, 2, None).unwrap();
        assert!(tr.kappa_floor <= 1.0);
    }
}
