//! Convergence-rate runs under the `eta = c / T^{3/4}`, `beta = 1 / sqrt(T)`
//! schedule and the log-log fit of the averaged gradient norm.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_training, ConvergenceTrace, RunConfig};
use crate::error::{Error, Result};

/// Horizon-dependent step size and momentum weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub c: f64,
}

impl Schedule {
    /// `c / T^{3/4}`.
    pub fn eta(&self, steps: usize) -> f64 {
        self.c / (steps.max(1) as f64).powf(0.75)
    }

    /// `1 / sqrt(T)`.
    pub fn beta(&self, steps: usize) -> f64 {
        1.0 / (steps.max(1) as f64).sqrt()
    }

    /// `base` with horizon `steps` and the scheduled `eta`, `beta`.
    pub fn apply(&self, base: &RunConfig, steps: usize) -> RunConfig {
        let mut cfg = base.clone();
        cfg.steps = steps;
        cfg.hp.eta = self.eta(steps);
        cfg.hp.beta = self.beta(steps);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub steps: usize,
    /// Time-averaged full gradient norm, averaged over runs.
    pub avg_grad_norm: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `ln avg_grad_norm` against `ln T`; `None` when
    /// some average is zero and the logarithm is undefined.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

fn fit(per_run: &[(usize, f64)]) -> Result<RateFit> {
    let mut groups: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &(t, v) in per_run {
        let e = groups.entry(t).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let points: Vec<RatePoint> = groups
        .into_iter()
        .map(|(steps, (sum, runs))| RatePoint {
            steps,
            avg_grad_norm: sum / runs as f64,
            runs,
        })
        .collect();
    let (lo, hi) = match (points.first(), points.last()) {
        (Some(a), Some(b)) => (a.steps, b.steps),
        _ => (0, 0),
    };
    if points.len() < 4 || lo == 0 || hi < 100 * lo {
        return Err(Error::InsufficientData(format!(
            "need at least 4 horizons spanning two decades, got {} in [{lo}, {hi}]",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.avg_grad_norm > 0.0 && p.avg_grad_norm.is_finite())) {
        return Ok(RateFit {
            points,
            slope: None,
            intercept: None,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.steps as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.avg_grad_norm.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(RateFit {
        points,
        slope: Some(slope),
        intercept: Some(my - slope * mx),
    })
}

/// Fits the decay of the time-averaged gradient norm over traces of
/// different horizons. Traces sharing a horizon are averaged. With a
/// schedule, every trace must carry that schedule's `eta` and `beta`.
pub fn convergence_rate_fit(traces: &[ConvergenceTrace], schedule: Option<&Schedule>) -> Result<RateFit> {
    let mut per_run = Vec::with_capacity(traces.len());
    for tr in traces {
        let t = tr.steps();
        if let Some(s) = schedule {
            if tr.hp.eta != s.eta(t) || tr.hp.beta != s.beta(t) {
                return Err(Error::InvalidInput(format!(
                    "trace with T = {t} does not follow the schedule"
                )));
            }
        }
        per_run.push((t, tr.avg_grad_norm()));
    }
    fit(&per_run)
}

/// Runs `base` for every horizon in `horizons` and every seed, with the
/// schedule applied, and fits the rate. Only the averaged gradient norms are
/// kept, so long horizons do not hold their traces in memory.
pub fn convergence_campaign(
    base: &RunConfig,
    schedule: &Schedule,
    horizons: &[usize],
    seeds: &[u64],
) -> Result<RateFit> {
    let mut distinct = horizons.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 4 || seeds.is_empty() {
        return Err(Error::InsufficientData(format!(
            "need at least 4 distinct horizons and one seed, got {} and {}",
            distinct.len(),
            seeds.len()
        )));
    }
    let jobs: Vec<(usize, u64)> = horizons
        .iter()
        .flat_map(|&t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let per_run = jobs
        .par_iter()
        .map(|&(t, s)| {
            let cfg = schedule.apply(&base.with_seed(s), t);
            Ok((t, run_training(&cfg)?.avg_grad_norm()))
        })
        .collect::<Result<Vec<_>>>()?;
    fit(&per_run)
}
