//! Multi-path campaigns with deterministic aggregation.
//!
//! Path `p` always draws from the stream with index `p`, and results are
//! folded in path order (chunks are computed in parallel, then reduced
//! sequentially), so campaign statistics are bit-identical for a fixed seed
//! regardless of thread count.

use rayon::prelude::*;

use crate::model::ReactionNetwork;
use crate::rng::RngStream;
use crate::scaling::{ReducedPdmp, ScalingSpec};
use crate::simulate::{
    nrm_time_change, pdmp_simulate, simulate_scaled, ssa_on_grid, CtmcPath, SimError, StepConfig,
};
use crate::stats::{Accumulator, SummaryStats};

const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtmcMethod {
    Direct,
    NextReaction,
    Scaled,
}

/// Sample a recorded jump path on a grid (state after the last event
/// strictly before each grid time).
pub fn sample_path_on_grid(path: &CtmcPath, grid: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut state: Vec<f64> = path.initial.iter().map(|&x| x as f64).collect();
    let mut ev = 0usize;
    for &g in grid {
        while ev < path.times.len() && path.times[ev] < g {
            for (i, &x) in path.states[ev].iter().enumerate() {
                state[i] = x as f64;
            }
            ev += 1;
        }
        out.push(state.clone());
    }
    out
}

/// Summary of one simulation campaign.
#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub grid: Vec<f64>,
    /// `[grid point][species]` summary across paths.
    pub stats: Vec<Vec<SummaryStats>>,
    /// Final-time state per path (for marginal histograms).
    pub final_states: Vec<Vec<f64>>,
    pub n_paths: usize,
    /// Total CTMC events or PDMP firings across paths.
    pub n_events_total: u64,
}

fn aggregate(grid: &[f64], n_species: usize, paths: usize, rows: Vec<PathRow>) -> CampaignResult {
    let mut acc: Vec<Vec<Accumulator>> = grid
        .iter()
        .map(|_| vec![Accumulator::new(); n_species])
        .collect();
    let mut final_states = Vec::with_capacity(paths);
    let mut n_events_total = 0u64;
    for (states, events) in rows {
        n_events_total += events;
        for (g, state) in states.iter().enumerate() {
            for (i, &x) in state.iter().enumerate() {
                acc[g][i].push(x);
            }
        }
        final_states.push(states.last().cloned().unwrap_or_default());
    }
    CampaignResult {
        grid: grid.to_vec(),
        stats: acc
            .into_iter()
            .map(|row| row.into_iter().map(|a| a.summarize()).collect())
            .collect(),
        final_states,
        n_paths: paths,
        n_events_total,
    }
}

/// Grid states plus the event count of one path.
type PathRow = (Vec<Vec<f64>>, u64);

fn run_chunked<F>(paths: usize, worker: F) -> Result<Vec<PathRow>, SimError>
where
    F: Fn(usize) -> Result<PathRow, SimError> + Sync,
{
    let mut rows = Vec::with_capacity(paths);
    let indices: Vec<usize> = (0..paths).collect();
    for chunk in indices.chunks(CHUNK) {
        let mut part: Vec<PathRow> = chunk
            .par_iter()
            .map(|&p| worker(p))
            .collect::<Result<_, _>>()?;
        rows.append(&mut part);
    }
    Ok(rows)
}

/// Exact-CTMC campaign sampled on `grid` (copy numbers, or scaled levels
/// with `CtmcMethod::Scaled`).
#[allow(clippy::too_many_arguments)]
pub fn ctmc_campaign(
    net: &ReactionNetwork,
    scaling: Option<(&ScalingSpec, f64, f64)>, // (spec, n, gamma) for the scaled view
    params: &[f64],
    grid: &[f64],
    paths: usize,
    seed: u64,
    max_events: u64,
    method: CtmcMethod,
) -> Result<CampaignResult, SimError> {
    let x0 = net.initial_copy_numbers();
    let rows = run_chunked(paths, |p| {
        let mut rng = RngStream::new(seed, p as u64);
        match method {
            CtmcMethod::Direct => {
                let out = ssa_on_grid(net, params, &x0, grid, &mut rng, max_events)?;
                Ok((out.states, out.n_events))
            }
            CtmcMethod::NextReaction => {
                let horizon = grid.last().copied().unwrap_or(0.0);
                let path = nrm_time_change(net, params, &x0, horizon, &mut rng, max_events)?;
                let n_events = path.times.len() as u64;
                Ok((sample_path_on_grid(&path, grid), n_events))
            }
            CtmcMethod::Scaled => {
                let (spec, n, gamma) =
                    scaling.expect("scaled campaign requires a scaling spec");
                let out =
                    simulate_scaled(net, spec, n, gamma, params, grid, &mut rng, max_events)?;
                Ok((out.states, out.n_events))
            }
        }
    })?;
    Ok(aggregate(grid, net.n_species(), paths, rows))
}

/// Hybrid-model campaign sampled on the config's record grid.
pub fn pdmp_campaign(
    model: &ReducedPdmp,
    params: &[f64],
    horizon: f64,
    cfg: &StepConfig,
    paths: usize,
    seed: u64,
) -> Result<CampaignResult, SimError> {
    let rows = run_chunked(paths, |p| {
        let mut rng = RngStream::new(seed, p as u64);
        let out = pdmp_simulate(model, params, horizon, cfg, &mut rng)?;
        Ok((out.states, out.n_firings))
    })?;
    Ok(aggregate(&cfg.record_grid, model.n_species(), paths, rows))
}
