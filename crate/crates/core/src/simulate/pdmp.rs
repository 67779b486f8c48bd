//! Hybrid (PDMP) simulation.
//!
//! Continuous species follow an explicit Euler flow; each discrete reaction
//! carries an internal time `T_k` (integrated propensity) and fires whenever
//! `T_k` crosses its unit-exponential threshold `P_k`, after which the
//! threshold is replenished by a fresh `-log(u)` increment. All quantities
//! advance on the same left-endpoint Euler grid; propensities are
//! re-evaluated only at step boundaries. Discrete firings are applied at the
//! end of the step in which the crossing happened, in ascending reaction
//! order.
//!
//! The optional augmentation advances the sensitivity state `y` (derivative
//! of the continuous state w.r.t. one parameter at frozen discrete state)
//! and the fundamental matrix `Phi` of the linearized flow on the same grid:
//!
//! ```text
//! dy/dt   = sum_{k cont} (d_theta lambda_k + <grad lambda_k, y>) zeta_k^(c),  y(0) = 0
//! dPhi/dt = M(t) Phi,  M = sum_{k cont} zeta_k^(c) (grad lambda_k)^T,  Phi(0) = I
//! ```

use crate::model::RateError;
use crate::rng::RngStream;
use crate::scaling::{guard_nonnegative, PdmpRateEvaluator, ReducedPdmp};
use crate::simulate::{SimError, StepConfig};

/// Request sensitivity augmentation along the path.
#[derive(Debug, Clone, Copy)]
pub struct AugmentSpec {
    pub theta_index: usize,
    pub with_phi: bool,
}

/// One mid-path snapshot taken at the first step boundary at or after the
/// requested time.
#[derive(Debug, Clone)]
pub struct Capture {
    /// Requested time.
    pub t: f64,
    /// Step boundary the snapshot was taken at.
    pub t_effective: f64,
    pub state: Vec<f64>,
    pub y: Vec<f64>,
}

/// Simulation request for one hybrid path.
#[derive(Debug, Clone, Copy)]
pub struct PdmpRun<'a> {
    pub params: &'a [f64],
    pub horizon: f64,
    pub cfg: &'a StepConfig,
    /// Full hybrid state override (defaults to the model's initial state).
    pub initial: Option<&'a [f64]>,
    pub augment: Option<AugmentSpec>,
    /// Sorted times at which to snapshot `(state, y)`.
    pub capture_times: &'a [f64],
}

impl<'a> PdmpRun<'a> {
    pub fn new(params: &'a [f64], horizon: f64, cfg: &'a StepConfig) -> Self {
        PdmpRun {
            params,
            horizon,
            cfg,
            initial: None,
            augment: None,
            capture_times: &[],
        }
    }
}

/// Sampled hybrid path (plus sensitivity trajectories when augmented).
#[derive(Debug, Clone)]
pub struct PdmpOutcome {
    pub grid: Vec<f64>,
    /// Full species vector at each grid time.
    pub states: Vec<Vec<f64>>,
    /// `y` at each grid time (augmented runs only).
    pub y_grid: Option<Vec<Vec<f64>>>,
    /// Row-major `S_c x S_c` fundamental matrix at each grid time.
    pub phi_grid: Option<Vec<Vec<f64>>>,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub final_y: Vec<f64>,
    pub final_phi: Option<Vec<f64>>,
    pub captures: Vec<Capture>,
    pub n_firings: u64,
    /// Sum of threshold increments drawn at firings (diagnostic: increments
    /// are i.i.d. unit exponentials).
    pub threshold_increment_sum: f64,
}

/// Simulate one hybrid path.
pub fn pdmp_path(
    model: &ReducedPdmp,
    run: PdmpRun<'_>,
    rng: &mut RngStream,
) -> Result<PdmpOutcome, SimError> {
    run.cfg.validate(run.horizon)?;
    let sc = model.continuous.len();
    let n_rx = model.reactions.len();
    let continuous_rx: Vec<usize> = model.continuous_reactions().map(|(k, _)| k).collect();
    let discrete_rx: Vec<usize> = model.discrete_reactions().map(|(k, _)| k).collect();

    let mut evaluator = PdmpRateEvaluator::new(model, run.params)?;
    let mut state: Vec<f64> = match run.initial {
        Some(s) => {
            assert_eq!(s.len(), model.n_species(), "initial state length mismatch");
            s.to_vec()
        }
        None => model.initial_state(),
    };

    // thresholds drawn once per discrete reaction, ascending reaction order
    let mut internal = vec![0.0f64; discrete_rx.len()];
    let mut thresholds: Vec<f64> = discrete_rx.iter().map(|_| rng.unit_exponential()).collect();

    let mut rates = vec![0.0f64; n_rx];
    let reads_cont: Vec<bool> = (0..n_rx)
        .map(|k| evaluator.reads_continuous_state(k))
        .collect();
    let mut stale_all = true;

    let mut y = vec![0.0f64; sc];
    let with_phi = run.augment.map(|a| a.with_phi).unwrap_or(false);
    let mut phi: Vec<f64> = if with_phi { identity(sc) } else { Vec::new() };
    let mut grad = vec![0.0f64; sc];
    let mut dy = vec![0.0f64; sc];
    let mut dx = vec![0.0f64; sc];
    let mut m_mat = vec![0.0f64; if with_phi { sc * sc } else { 0 }];
    let mut phi_scratch = vec![0.0f64; if with_phi { sc * sc } else { 0 }];

    let grid = &run.cfg.record_grid;
    let mut outcome = PdmpOutcome {
        grid: grid.clone(),
        states: Vec::with_capacity(grid.len()),
        y_grid: run.augment.map(|_| Vec::with_capacity(grid.len())),
        phi_grid: with_phi.then(|| Vec::with_capacity(grid.len())),
        final_time: run.horizon,
        final_state: Vec::new(),
        final_y: Vec::new(),
        final_phi: None,
        captures: Vec::new(),
        n_firings: 0,
        threshold_increment_sum: 0.0,
    };
    let mut grid_cursor = 0usize;
    let mut cap_cursor = 0usize;

    macro_rules! record_up_to {
        ($t:expr) => {
            while grid_cursor < grid.len() && grid[grid_cursor] <= $t {
                outcome.states.push(state.clone());
                if let Some(yg) = outcome.y_grid.as_mut() {
                    yg.push(y.clone());
                }
                if let Some(pg) = outcome.phi_grid.as_mut() {
                    pg.push(phi.clone());
                }
                grid_cursor += 1;
            }
            while cap_cursor < run.capture_times.len() && run.capture_times[cap_cursor] <= $t {
                outcome.captures.push(Capture {
                    t: run.capture_times[cap_cursor],
                    t_effective: $t,
                    state: state.clone(),
                    y: y.clone(),
                });
                cap_cursor += 1;
            }
        };
    }

    record_up_to!(0.0);

    let dt = run.cfg.dt;
    let n_steps = (run.horizon / dt).ceil() as u64;
    for step in 0..n_steps {
        let t0 = step as f64 * dt;
        let t1 = ((step + 1) as f64 * dt).min(run.horizon);
        let h = t1 - t0;
        if h <= 0.0 {
            break;
        }

        for (k, rate) in rates.iter_mut().enumerate() {
            if stale_all || reads_cont[k] {
                let r = evaluator.rate(k, &state, run.params)?;
                if r < 0.0 {
                    return Err(RateError::Negative {
                        reaction: k,
                        value: r,
                    }
                    .into());
                }
                *rate = r;
            }
        }
        stale_all = false;

        // sensitivity pieces evaluated at the left endpoint, before the
        // state moves
        if let Some(aug) = run.augment {
            dy.fill(0.0);
            if with_phi {
                m_mat.fill(0.0);
            }
            for &k in &continuous_rx {
                let dtheta = evaluator.rate_dtheta(k, &state, run.params, aug.theta_index)?;
                evaluator.rate_grad(k, &state, run.params, &mut grad)?;
                let grad_dot_y: f64 = grad.iter().zip(&y).map(|(g, yv)| g * yv).sum();
                let weight = dtheta + grad_dot_y;
                let zeta = &model.reactions[k].zeta_hat;
                for (slot, &i) in model.continuous.iter().enumerate() {
                    let z = zeta[i] as f64;
                    dy[slot] += weight * z;
                    if with_phi {
                        for (col, g) in grad.iter().enumerate() {
                            m_mat[slot * sc + col] += z * g;
                        }
                    }
                }
            }
        }

        dx.fill(0.0);
        for &k in &continuous_rx {
            let zeta = &model.reactions[k].zeta_hat;
            for (slot, &i) in model.continuous.iter().enumerate() {
                dx[slot] += rates[k] * zeta[i] as f64;
            }
        }
        for (slot, &i) in model.continuous.iter().enumerate() {
            state[i] += dx[slot] * h;
        }
        for (pos, &k) in discrete_rx.iter().enumerate() {
            internal[pos] += rates[k] * h;
        }
        if run.augment.is_some() {
            for (slot, yv) in y.iter_mut().enumerate() {
                *yv += dy[slot] * h;
            }
            if with_phi {
                // Phi <- Phi + h * M * Phi
                for r in 0..sc {
                    for c in 0..sc {
                        let mut acc = 0.0;
                        for m in 0..sc {
                            acc += m_mat[r * sc + m] * phi[m * sc + c];
                        }
                        phi_scratch[r * sc + c] = phi[r * sc + c] + h * acc;
                    }
                }
                std::mem::swap(&mut phi, &mut phi_scratch);
            }
        }

        guard_nonnegative(&mut state, &model.continuous)?;
        for &i in &model.continuous {
            if !state[i].is_finite() {
                return Err(SimError::NonFiniteState { t: t1 });
            }
        }

        let mut fired = false;
        for (pos, &k) in discrete_rx.iter().enumerate() {
            while internal[pos] > thresholds[pos] {
                let zeta = &model.reactions[k].zeta_hat;
                // clock overshoot can outrun a rate that shut off mid-step;
                // never drive a count negative
                let feasible = model.discrete.iter().all(|&i| state[i] + zeta[i] as f64 >= 0.0);
                if !feasible {
                    break;
                }
                for &i in &model.discrete {
                    state[i] += zeta[i] as f64;
                }
                let inc = rng.unit_exponential();
                thresholds[pos] += inc;
                outcome.n_firings += 1;
                outcome.threshold_increment_sum += inc;
                fired = true;
                if outcome.n_firings > run.cfg.max_events {
                    return Err(SimError::EventBudget {
                        t: t1,
                        events: outcome.n_firings,
                    });
                }
            }
        }
        if fired {
            stale_all = true;
        }

        record_up_to!(t1);
    }

    record_up_to!(run.horizon);

    outcome.final_state = state;
    outcome.final_y = y;
    if with_phi {
        outcome.final_phi = Some(phi);
    }
    Ok(outcome)
}

/// Plain hybrid simulation sampled on the configured grid.
pub fn pdmp_simulate(
    model: &ReducedPdmp,
    params: &[f64],
    horizon: f64,
    cfg: &StepConfig,
    rng: &mut RngStream,
) -> Result<PdmpOutcome, SimError> {
    pdmp_path(model, PdmpRun::new(params, horizon, cfg), rng)
}

/// Hybrid simulation with the sensitivity state `y` (and optionally the
/// fundamental matrix) advanced along the path.
pub fn pdmp_simulate_augmented(
    model: &ReducedPdmp,
    params: &[f64],
    theta_index: usize,
    horizon: f64,
    cfg: &StepConfig,
    rng: &mut RngStream,
    with_phi: bool,
) -> Result<PdmpOutcome, SimError> {
    let mut run = PdmpRun::new(params, horizon, cfg);
    run.augment = Some(AugmentSpec {
        theta_index,
        with_phi,
    });
    pdmp_path(model, run, rng)
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}
