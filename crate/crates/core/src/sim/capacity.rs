//! Replications and the system-capacity sweep.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::rng::run_seed;
use crate::sim::engine::{simulate, RunOutput, TraceFlags};
use crate::sim::kpi::satisfied;

/// Satisfied UEs and UEs with at least one measured packet.
pub fn satisfied_count(run: &RunOutput, reliability: f64) -> Result<(usize, usize)> {
    let mut yes = 0;
    let mut n = 0;
    for k in run.kpis.iter().filter(|k| k.packets_total > 0) {
        n += 1;
        yes += usize::from(satisfied(k, reliability)?);
    }
    Ok((yes, n))
}

/// Seeds of the configured replications.
pub fn run_seeds(scenario: &Scenario) -> Vec<u64> {
    (0..scenario.runs).map(|r| run_seed(scenario.seed, r)).collect()
}

/// All replications of `scenario`, in seed order. Runs execute in parallel.
pub fn replicate(scenario: &Scenario) -> Result<Vec<RunOutput>> {
    run_seeds(scenario)
        .into_par_iter()
        .map(|seed| simulate(scenario, seed, TraceFlags::default()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub ues_per_cell: usize,
    /// Satisfied UEs over all UEs, pooled across runs.
    pub satisfied_fraction: f64,
    /// Standard error of the per-run satisfied fraction.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult {
    pub curve: Vec<CapacityPoint>,
    /// Largest tested load meeting the satisfied-fraction bar, 0 if none does.
    pub capacity: usize,
}

/// Sweep `ue_counts` with `scenario.runs` replications per load.
///
/// Every load level reuses the same run seeds.
pub fn system_capacity(scenario: &Scenario, ue_counts: &[usize], satisfied_fraction: f64) -> Result<CapacityResult> {
    if ue_counts.is_empty() {
        return Err(Error::EmptyInput("capacity sweep needs at least one load level"));
    }
    if !ue_counts.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Domain("ue_counts must be strictly ascending".into()));
    }
    let seeds = run_seeds(scenario);
    let jobs: Vec<(usize, u64)> = ue_counts.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let counts: Vec<(usize, usize)> = jobs
        .into_par_iter()
        .map(|(n, seed)| {
            let mut s = scenario.clone();
            s.ues_per_cell = n;
            let run = simulate(&s, seed, TraceFlags::default())?;
            satisfied_count(&run, scenario.reliability)
        })
        .collect::<Result<_>>()?;

    let mut curve = Vec::with_capacity(ue_counts.len());
    let mut capacity = 0;
    for (level, chunk) in ue_counts.iter().zip(counts.chunks(seeds.len())) {
        let (yes, n) = chunk.iter().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
        let fraction = if n > 0 { yes as f64 / n as f64 } else { 0.0 };
        let per_run: Vec<f64> = chunk.iter().filter(|c| c.1 > 0).map(|c| c.0 as f64 / c.1 as f64).collect();
        let stderr = standard_error(&per_run);
        if n > 0 && fraction >= satisfied_fraction {
            capacity = *level;
        }
        curve.push(CapacityPoint { ues_per_cell: *level, satisfied_fraction: fraction, stderr });
    }
    Ok(CapacityResult { curve, capacity })
}

/// Standard error of the mean; 0 for fewer than two samples.
pub fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}
