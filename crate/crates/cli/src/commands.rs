//! The five experiment commands.
//!
//! Output files, all header-first CSV unless noted:
//!
//! | command | files |
//! |---|---|
//! | train | `trace.csv` (`trace_seed<s>.csv` per listed seed): `t,loss,grad_norm,mom_norm,kappa,branch` |
//! | stability | `stability.csv` (`stability_seed<s>.csv` per seed): `t,param_div,mom_div,kappa_a,kappa_b,branch_a,branch_b,psi,phi`; with seeds also `stability_median.csv`: `t,param_div,mom_div,phi`; `comparison.json` when `compare` is set |
//! | probe | `probe.csv`: `pair,lhs,rhs,kappa,satisfied` |
//! | convergence | `convergence.csv`: `T,avg_grad_norm,runs` |
//! | sweep | `sweep.csv`: `tau,seed,final_loss,final_div,ortho_fraction` |
//!
//! Every command also writes `summary.json`, which embeds the resolved config
//! under `resolved_config`. Row `t = 0` describes the initial state: its
//! `kappa` is `inf` and its `branch` is `none`.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use matmuon::experiments::{
    convergence_campaign, davis_kahan_campaign, generalization_gap, median, replace_one_divergences,
    run_training, stability_pair_run, stability_pair_run_on, tau_sweep, ConvergenceTrace, RunConfig, Schedule,
    StabilityTrace,
};
use matmuon::problems::{derive_seed, NeighborSpec};
use matmuon::{Branch, OptimizerKind};

use crate::config::{ExperimentConfig, ExperimentSection};
use crate::error::{CliError, Result};
use crate::output::{write_atomic, write_json, Csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Stability,
    Probe,
    Convergence,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Stability => "stability",
            Command::Probe => "probe",
            Command::Convergence => "convergence",
            Command::Sweep => "sweep",
        }
    }
}

fn branch_str(b: Option<Branch>) -> &'static str {
    b.map_or("none", |b| b.as_str())
}

fn file_name(stem: &str, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("{stem}_seed{s}.csv"),
        None => format!("{stem}.csv"),
    }
}

/// Runs `cmd` on `cfg`, writing into `out`. Returns the names of the CSV
/// files written.
pub fn execute(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    if cmd.name() != cfg.experiment.name() {
        return Err(CliError::Config(format!(
            "command `{}` cannot run an experiment of type `{}`",
            cmd.name(),
            cfg.experiment.name()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    match &cfg.experiment {
        ExperimentSection::Train => train(cfg, out),
        ExperimentSection::Stability {
            replace_index,
            replacement_seed,
            identical_replacement,
            compare,
        } => stability(cfg, out, *replace_index, *replacement_seed, *identical_replacement, *compare),
        ExperimentSection::Probe {
            pairs,
            seed,
            max_dim,
            delta_scale,
        } => probe(cfg, out, *pairs, *seed, *max_dim, *delta_scale),
        ExperimentSection::Convergence { horizons, c } => convergence(cfg, out, horizons, *c),
        ExperimentSection::Sweep { taus } => sweep(cfg, out, taus),
    }
}

fn trace_csv(trace: &ConvergenceTrace) -> Csv {
    let mut csv = Csv::new(&["t", "loss", "grad_norm", "mom_norm", "kappa", "branch"]);
    for r in &trace.records {
        csv.row(&[&r.t, &r.loss, &r.grad_norm, &r.mom_norm, &r.kappa, &branch_str(r.branch)]);
    }
    csv
}

#[derive(Serialize)]
struct TrainRun {
    seed: Option<u64>,
    file: String,
    final_loss: f64,
    avg_grad_norm: f64,
    ortho_fraction: f64,
    generalization_gap: f64,
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let runs = cfg.seeded_runs()?;
    let results = runs
        .par_iter()
        .map(|(seed, rc)| {
            let trace = run_training(rc)?;
            let gap = generalization_gap(rc, &rc.dataset()?, &trace.final_state.w)?;
            Ok((*seed, trace, gap))
        })
        .collect::<Result<Vec<_>, matmuon::Error>>()?;
    let mut files = Vec::new();
    let mut summary = Vec::new();
    for (seed, trace, gap) in &results {
        let name = file_name("trace", *seed);
        write_atomic(out, &name, trace_csv(trace).as_str().as_bytes())?;
        summary.push(TrainRun {
            seed: *seed,
            file: name.clone(),
            final_loss: trace.final_loss(),
            avg_grad_norm: trace.avg_grad_norm(),
            ortho_fraction: trace.ortho_fraction(),
            generalization_gap: *gap,
        });
        files.push(name);
    }
    write_json(out, "summary.json", &json!({ "resolved_config": cfg, "runs": summary }))?;
    Ok(files)
}

fn stability_csv(trace: &StabilityTrace) -> Csv {
    let mut csv = Csv::new(&[
        "t", "param_div", "mom_div", "kappa_a", "kappa_b", "branch_a", "branch_b", "psi", "phi",
    ]);
    for r in &trace.records {
        csv.row(&[
            &r.t,
            &r.param_div,
            &r.mom_div,
            &r.kappa_a,
            &r.kappa_b,
            &branch_str(r.branch_a),
            &branch_str(r.branch_b),
            &r.psi,
            &r.phi,
        ]);
    }
    csv
}

fn stability_pair(rc: &RunConfig, index: usize, replacement_seed: u64, identical: bool) -> matmuon::Result<StabilityTrace> {
    if identical {
        let data = rc.dataset()?;
        let same = data.samples[index].clone();
        let nb = NeighborSpec::new(data, index, same)?;
        stability_pair_run_on(rc, &nb, None)
    } else {
        stability_pair_run(rc, index, replacement_seed, None)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn stability(
    cfg: &ExperimentConfig,
    out: &Path,
    index: usize,
    replacement_seed: u64,
    identical: bool,
    compare: bool,
) -> Result<Vec<String>> {
    let runs = cfg.seeded_runs()?;
    let traces = runs
        .par_iter()
        .map(|(seed, rc)| Ok((*seed, stability_pair(rc, index, replacement_seed, identical)?)))
        .collect::<Result<Vec<_>, matmuon::Error>>()?;

    let mut files = Vec::new();
    let mut summary = Vec::new();
    for (seed, trace) in &traces {
        let name = file_name("stability", *seed);
        write_atomic(out, &name, stability_csv(trace).as_str().as_bytes())?;
        let final_div = trace.final_param_div();
        summary.push(json!({
            "seed": seed,
            "file": name,
            "final_param_div": final_div,
            "stability_proxy": trace.constants.g_hat * final_div,
            "variant": trace.variant,
            "kappa_floor": trace.kappa_floor,
            "bound_overflow": trace.bound_overflow,
            "constants": trace.constants,
        }));
        files.push(name);
    }

    if !cfg.run.seeds.is_empty() {
        let mut csv = Csv::new(&["t", "param_div", "mom_div", "phi"]);
        let len = traces.iter().map(|(_, t)| t.records.len()).min().unwrap_or(0);
        for t in 0..len {
            let col = |f: fn(&matmuon::experiments::StabilityRecord) -> f64| -> Vec<f64> {
                traces.iter().map(|(_, tr)| f(&tr.records[t])).collect()
            };
            csv.row(&[
                &t,
                &median(&col(|r| r.param_div)),
                &median(&col(|r| r.mom_div)),
                &median(&col(|r| r.phi)),
            ]);
        }
        write_atomic(out, "stability_median.csv", csv.as_str().as_bytes())?;
        files.push("stability_median.csv".to_string());
    }

    if compare {
        let comparison = compare_optimizers(cfg, replacement_seed)?;
        write_json(out, "comparison.json", &comparison)?;
    }
    write_json(out, "summary.json", &json!({ "resolved_config": cfg, "runs": summary }))?;
    Ok(files)
}

#[derive(Serialize)]
struct Comparison {
    seeds: Vec<u64>,
    /// Per seed, the mean over replace indices of the final divergence.
    muon_mean_div: Vec<f64>,
    mimuon_mean_div: Vec<f64>,
    muon_median: f64,
    mimuon_median: f64,
}

/// Muon and MiMuon on the same instance, each seed averaging the final
/// divergence over every replace index.
fn compare_optimizers(cfg: &ExperimentConfig, replacement_seed: u64) -> Result<Comparison> {
    let base = cfg.run_config()?;
    let seeds = cfg.campaign_seeds();
    let divs = |kind: OptimizerKind| -> Result<Vec<f64>> {
        Ok(seeds
            .iter()
            .map(|&s| {
                let mut rc = base.with_seed(s);
                rc.optimizer = kind;
                Ok(mean(&replace_one_divergences(&rc, derive_seed(replacement_seed, s))?))
            })
            .collect::<Result<Vec<_>, matmuon::Error>>()?)
    };
    let muon = divs(OptimizerKind::Muon)?;
    let mimuon = divs(OptimizerKind::MiMuon)?;
    Ok(Comparison {
        muon_median: median(&muon),
        mimuon_median: median(&mimuon),
        seeds,
        muon_mean_div: muon,
        mimuon_mean_div: mimuon,
    })
}

fn probe(cfg: &ExperimentConfig, out: &Path, pairs: usize, seed: u64, max_dim: usize, delta_scale: f64) -> Result<Vec<String>> {
    let campaign = davis_kahan_campaign(seed, pairs, max_dim, delta_scale)?;
    let mut csv = Csv::new(&["pair", "lhs", "rhs", "kappa", "satisfied"]);
    for (k, r) in campaign.records.iter().enumerate() {
        csv.row(&[&k, &r.lhs, &r.rhs, &r.kappa, &r.satisfied]);
    }
    write_atomic(out, "probe.csv", csv.as_str().as_bytes())?;
    write_json(
        out,
        "summary.json",
        &json!({
            "resolved_config": cfg,
            "pairs": campaign.records.len(),
            "satisfied_fraction": campaign.satisfied_fraction,
        }),
    )?;
    Ok(vec!["probe.csv".to_string()])
}

fn convergence(cfg: &ExperimentConfig, out: &Path, horizons: &[usize], c: f64) -> Result<Vec<String>> {
    let schedule = Schedule { c };
    let fit = convergence_campaign(&cfg.run_config()?, &schedule, horizons, &cfg.campaign_seeds())?;
    let mut csv = Csv::new(&["T", "avg_grad_norm", "runs"]);
    for p in &fit.points {
        csv.row(&[&p.steps, &p.avg_grad_norm, &p.runs]);
    }
    write_atomic(out, "convergence.csv", csv.as_str().as_bytes())?;
    write_json(
        out,
        "summary.json",
        &json!({ "resolved_config": cfg, "slope": fit.slope, "intercept": fit.intercept }),
    )?;
    Ok(vec!["convergence.csv".to_string()])
}

fn sweep(cfg: &ExperimentConfig, out: &Path, taus: &[f64]) -> Result<Vec<String>> {
    let rows = tau_sweep(&cfg.run_config()?, taus, &cfg.campaign_seeds())?;
    let mut csv = Csv::new(&["tau", "seed", "final_loss", "final_div", "ortho_fraction"]);
    for r in &rows {
        csv.row(&[&r.tau, &r.seed, &r.final_loss, &r.final_div, &r.ortho_fraction]);
    }
    write_atomic(out, "sweep.csv", csv.as_str().as_bytes())?;
    write_json(out, "summary.json", &json!({ "resolved_config": cfg, "rows": rows }))?;
    Ok(vec!["sweep.csv".to_string()])
}
