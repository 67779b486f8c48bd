//! Parameter-sensitivity estimation for hybrid and CTMC models.
//!
//! The hybrid estimator decomposes the sensitivity of `E f(Z(T))` into a
//! continuous part `E <grad f(Z(T)), y(T)>` (from the augmented path) and a
//! discrete part: for each discrete reaction, the integral over `[0, T]` of
//! the total rate derivative `D_theta lambda_k` times the jump effect
//! `Delta_k Psi_{T-t}`, estimated unbiasedly by sampling evaluation times
//! uniformly and spawning split-coupled auxiliary path pairs started from
//! the perturbed and unperturbed discrete states.
//!
//! Finite-difference estimators (hybrid and exact-CTMC) run split-coupled
//! pairs at `theta` and `theta + h` so the difference quotient keeps the
//! shared randomness.

pub mod coupling;
pub mod tilt;

pub use coupling::{coupled_ctmc_pair, coupled_pdmp_pair, CoupledCtmcOutcome, CoupledOutcome, CoupledPdmpRun};
pub use tilt::{build_tilted_model, tilted_sensitivity_fd, TiltedModel};

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{EvalContext, EvalStack, Expression, SymbolRef};
use crate::model::{ModelError, RateError, RateLaw, ReactionNetwork};
use crate::rng::RngStream;
use crate::scaling::{rat_f64, PdmpRateEvaluator, ReducedPdmp, ScalingSpec};
use crate::simulate::{pdmp_path, ssa_on_grid, AugmentSpec, PdmpRun, SimError, StepConfig};
use crate::stats::summarize_samples;

pub(crate) const STREAM_MAIN: u64 = 0;
pub(crate) const STREAM_AUX: u64 = 1;
pub(crate) const STREAM_EVAL_TIMES: u64 = 2;
pub(crate) const STREAM_CFD: u64 = 3;
pub(crate) const STREAM_TILT: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    PdmpDecomposition,
    CfdPdmp,
    CfdCtmc,
    IpaCtmc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PdmpDecomposition => "pdmp-decomposition",
            Method::CfdPdmp => "cfd-pdmp",
            Method::CfdCtmc => "cfd-ctmc",
            Method::IpaCtmc => "ipa-ctmc",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pdmp-decomposition" => Ok(Method::PdmpDecomposition),
            "cfd-pdmp" => Ok(Method::CfdPdmp),
            "cfd-ctmc" => Ok(Method::CfdCtmc),
            "ipa-ctmc" => Ok(Method::IpaCtmc),
            other => Err(format!(
                "unknown method `{other}` (expected pdmp-decomposition, cfd-pdmp, cfd-ctmc or ipa-ctmc)"
            )),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum SensError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("auxiliary simulation budget exceeded: campaign needs {required}, cap is {cap}")]
    AuxBudget { required: u64, cap: u64 },
    #[error("invalid request: {0}")]
    BadRequest(String),
}

/// Campaign knobs shared by every estimator.
#[derive(Debug, Clone, Copy)]
pub struct SensOptions {
    pub paths: usize,
    /// Perturbation size for finite-difference estimators, relative to the
    /// current parameter magnitude (used as an absolute step when the
    /// parameter is zero).
    pub h: f64,
    /// Central instead of forward differences.
    pub central: bool,
    /// Evaluation times per (path, discrete reaction) for the decomposition.
    pub aux_times: usize,
    /// Coupled auxiliary pairs per evaluation time.
    pub aux_pairs: usize,
    pub seed: u64,
    /// Cap on the total number of auxiliary pair simulations.
    pub aux_budget: u64,
}

impl Default for SensOptions {
    fn default() -> Self {
        SensOptions {
            paths: 1000,
            h: 1e-2,
            central: false,
            aux_times: 10,
            aux_pairs: 1,
            seed: crate::rng::DEFAULT_SEED,
            aux_budget: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Point estimate with standard error and optional continuous/discrete
/// split. When parts are present the total is their exact sum.
#[derive(Debug, Clone)]
pub struct SensitivityEstimate {
    pub parameter: String,
    pub method: Method,
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    /// `(continuous, discrete)` contributions from the same samples.
    pub parts: Option<(PartEstimate, PartEstimate)>,
    pub wall_time_s: f64,
    /// Decoupling-time histogram for coupled estimators:
    /// `(bin upper edge, count)`, last bin is "never decoupled".
    pub decouple_histogram: Option<Vec<(f64, u64)>>,
}

/// Finite-difference step: relative to the parameter magnitude, absolute
/// for zero-valued parameters.
pub fn absolute_step(h: f64, theta: f64) -> f64 {
    if theta == 0.0 {
        h
    } else {
        h * theta.abs()
    }
}

fn decouple_histogram(times: &[Option<f64>], horizon: f64) -> Vec<(f64, u64)> {
    const BINS: usize = 10;
    let mut bins = [0u64; BINS + 1];
    for t in times {
        match t {
            Some(t) => {
                let b = ((t / horizon) * BINS as f64).floor() as usize;
                bins[b.min(BINS - 1)] += 1;
            }
            None => bins[BINS] += 1,
        }
    }
    let mut out: Vec<(f64, u64)> = (0..BINS)
        .map(|b| (horizon * (b + 1) as f64 / BINS as f64, bins[b]))
        .collect();
    out.push((f64::INFINITY, bins[BINS]));
    out
}

/// Gradient of an observable over the continuous coordinates of a hybrid
/// state.
fn observable_grad_cont(
    f: &Expression,
    continuous: &[usize],
    state: &[f64],
    params: &[f64],
    stack: &mut EvalStack,
) -> Result<Vec<f64>, RateError> {
    let ctx = EvalContext { state, params };
    let mut grad = Vec::with_capacity(continuous.len());
    for &i in continuous {
        let d = if f.depends_on_species(i) {
            f.derivative(ctx, SymbolRef::Species(i), stack)?
        } else {
            0.0
        };
        grad.push(d);
    }
    Ok(grad)
}

pub(crate) fn eval_observable(
    f: &Expression,
    state: &[f64],
    params: &[f64],
    stack: &mut EvalStack,
) -> Result<f64, RateError> {
    Ok(f.eval(EvalContext { state, params }, stack)?)
}

// ---------------------------------------------------------------------------
// Hybrid decomposition estimator
// ---------------------------------------------------------------------------

/// Continuous contribution only: `E <grad f(Z(T)), y(T)>`.
pub fn sens_continuous(
    model: &ReducedPdmp,
    observable: &str,
    theta_name: &str,
    horizon: f64,
    cfg: &StepConfig,
    opts: &SensOptions,
) -> Result<SensitivityEstimate, SensError> {
    run_decomposition(model, observable, theta_name, horizon, cfg, opts, true, false)
}

/// Discrete contribution only (auxiliary-path estimator).
pub fn sens_discrete_ipa(
    model: &ReducedPdmp,
    observable: &str,
    theta_name: &str,
    horizon: f64,
    cfg: &StepConfig,
    opts: &SensOptions,
) -> Result<SensitivityEstimate, SensError> {
    run_decomposition(model, observable, theta_name, horizon, cfg, opts, false, true)
}

/// Full decomposition: both contributions from the same augmented paths;
/// the total is exactly the sum of the parts.
pub fn sens_pdmp_total(
    model: &ReducedPdmp,
    observable: &str,
    theta_name: &str,
    horizon: f64,
    cfg: &StepConfig,
    opts: &SensOptions,
) -> Result<SensitivityEstimate, SensError> {
    run_decomposition(model, observable, theta_name, horizon, cfg, opts, true, true)
}

#[allow(clippy::too_many_arguments)]
fn run_decomposition(
    model: &ReducedPdmp,
    observable: &str,
    theta_name: &str,
    horizon: f64,
    cfg: &StepConfig,
    opts: &SensOptions,
    with_continuous: bool,
    with_discrete: bool,
) -> Result<SensitivityEstimate, SensError> {
    let start = Instant::now();
    let theta_index = model
        .param_index(theta_name)
        .ok_or_else(|| ModelError::UnknownParameter {
            name: theta_name.into(),
        })?;
    let f = model.observable(observable)?.clone();
    let params = model.param_values.clone();
    let discrete_rx: Vec<usize> = model.discrete_reactions().map(|(k, _)| k).collect();
    let m = opts.aux_times;
    if with_discrete && m == 0 {
        return Err(SensError::BadRequest("aux_times must be >= 1".into()));
    }
    if with_discrete {
        let required =
            opts.paths as u64 * discrete_rx.len() as u64 * m as u64 * opts.aux_pairs as u64;
        if required > opts.aux_budget {
            return Err(SensError::AuxBudget {
                required,
                cap: opts.aux_budget,
            });
        }
    }

    let worker = |p: usize| -> Result<(f64, f64), SensError> {
        // evaluation times per (discrete reaction, slot), from a stream
        // separate from the dynamics so the main path matches a plain run
        let mut plan: Vec<(f64, usize, usize)> = Vec::new();
        if with_discrete {
            let mut ts = RngStream::derive(opts.seed, &[STREAM_EVAL_TIMES, p as u64]);
            for pos in 0..discrete_rx.len() {
                for j in 0..m {
                    plan.push((ts.next_f64() * horizon, pos, j));
                }
            }
            plan.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite times"));
        }
        let capture_times: Vec<f64> = plan.iter().map(|e| e.0).collect();

        let mut rng = RngStream::derive(opts.seed, &[STREAM_MAIN, p as u64]);
        let mut run = PdmpRun::new(&params, horizon, cfg);
        run.augment = Some(AugmentSpec {
            theta_index,
            with_phi: false,
        });
        run.capture_times = &capture_times;
        let out = pdmp_path(model, run, &mut rng)?;

        let mut stack = EvalStack::new();
        let c_p = if with_continuous {
            let grad = observable_grad_cont(
                &f,
                &model.continuous,
                &out.final_state,
                &params,
                &mut stack,
            )?;
            grad.iter().zip(&out.final_y).map(|(g, y)| g * y).sum()
        } else {
            0.0
        };

        let mut d_p = 0.0;
        if with_discrete {
            let mut evaluator = PdmpRateEvaluator::new(model, &params)?;
            let mut grad = vec![0.0f64; model.continuous.len()];
            for (idx, &(_t, pos, j)) in plan.iter().enumerate() {
                let cap = &out.captures[idx];
                let k = discrete_rx[pos];
                let dtheta = evaluator.rate_dtheta(k, &cap.state, &params, theta_index)?;
                evaluator.rate_grad(k, &cap.state, &params, &mut grad)?;
                let grad_dot_y: f64 = grad.iter().zip(&cap.y).map(|(g, y)| g * y).sum();
                let weight = dtheta + grad_dot_y;
                if weight == 0.0 {
                    continue;
                }
                let zeta = &model.reactions[k].zeta_hat;
                let mut init_plus = cap.state.clone();
                let mut feasible = true;
                for &i in &model.discrete {
                    init_plus[i] += zeta[i] as f64;
                    if init_plus[i] < 0.0 {
                        feasible = false;
                    }
                }
                if !feasible {
                    // the jump leaves the state space; its rate is zero
                    // there so the exact integrand carries no mass
                    continue;
                }
                let remaining = horizon - cap.t_effective;
                let mut diff_sum = 0.0;
                for pair in 0..opts.aux_pairs {
                    let mut aux_rng = RngStream::derive(
                        opts.seed,
                        &[STREAM_AUX, p as u64, pos as u64, j as u64, pair as u64],
                    );
                    let coupled = coupled_pdmp_pair(
                        model,
                        CoupledPdmpRun {
                            params_a: &params,
                            params_b: &params,
                            initial_a: &init_plus,
                            initial_b: &cap.state,
                            horizon: remaining,
                            cfg,
                        },
                        &mut aux_rng,
                    )?;
                    let fa = eval_observable(&f, &coupled.final_a, &params, &mut stack)?;
                    let fb = eval_observable(&f, &coupled.final_b, &params, &mut stack)?;
                    diff_sum += fa - fb;
                }
                d_p += weight * (horizon / m as f64) * diff_sum / opts.aux_pairs as f64;
            }
        }
        Ok((c_p, d_p))
    };

    let results: Vec<(f64, f64)> = (0..opts.paths)
        .into_par_iter()
        .map(worker)
        .collect::<Result<_, _>>()?;

    let c: Vec<f64> = results.iter().map(|r| r.0).collect();
    let d: Vec<f64> = results.iter().map(|r| r.1).collect();
    let tot: Vec<f64> = results.iter().map(|r| r.0 + r.1).collect();
    let sc = summarize_samples(&c);
    let sd = summarize_samples(&d);
    let st = summarize_samples(&tot);

    Ok(SensitivityEstimate {
        parameter: theta_name.to_owned(),
        method: Method::PdmpDecomposition,
        value: sc.mean + sd.mean,
        stderr: st.stderr,
        n: opts.paths as u64,
        parts: Some((
            PartEstimate {
                value: sc.mean,
                stderr: sc.stderr,
            },
            PartEstimate {
                value: sd.mean,
                stderr: sd.stderr,
            },
        )),
        wall_time_s: start.elapsed().as_secs_f64(),
        decouple_histogram: None,
    })
}

// ---------------------------------------------------------------------------
// Coupled finite differences, hybrid
// ---------------------------------------------------------------------------

/// Split-coupled finite-difference sensitivity on the reduced model.
pub fn cfd_pdmp(
    model: &ReducedPdmp,
    observable: &str,
    theta_name: &str,
    horizon: f64,
    cfg: &StepConfig,
    opts: &SensOptions,
) -> Result<SensitivityEstimate, SensError> {
    let start = Instant::now();
    if opts.h < 0.0 || opts.h.is_nan() {
        return Err(SensError::BadRequest("h must be nonnegative for cfd".into()));
    }
    let theta0 = model.param_values[model
        .param_index(theta_name)
        .ok_or_else(|| ModelError::UnknownParameter {
            name: theta_name.into(),
        })?];
    let f = model.observable(observable)?.clone();
    let h_abs = absolute_step(opts.h, theta0);
    // at h = 0 the coupled pair is bit-identical, so the quotient is an
    // exact zero; the unit denominator only avoids 0/0
    let denom_base = if h_abs == 0.0 { 1.0 } else { h_abs };
    let (theta_a, theta_b, denom) = if opts.central {
        (theta0 - h_abs, theta0 + h_abs, 2.0 * denom_base)
    } else {
        (theta0, theta0 + h_abs, denom_base)
    };
    let params_a = model.params_with(theta_name, theta_a)?;
    let params_b = model.params_with(theta_name, theta_b)?;
    let initial = model.initial_state();

    let worker = |p: usize| -> Result<(f64, Option<f64>), SensError> {
        let mut rng = RngStream::derive(opts.seed, &[STREAM_CFD, p as u64]);
        let out = coupled_pdmp_pair(
            model,
            CoupledPdmpRun {
                params_a: &params_a,
                params_b: &params_b,
                initial_a: &initial,
                initial_b: &initial,
                horizon,
                cfg,
            },
            &mut rng,
        )?;
        let mut stack = EvalStack::new();
        let fa = eval_observable(&f, &out.final_a, &params_a, &mut stack)?;
        let fb = eval_observable(&f, &out.final_b, &params_b, &mut stack)?;
        Ok(((fb - fa) / denom, out.decouple_time))
    };

    let results: Vec<(f64, Option<f64>)> = (0..opts.paths)
        .into_par_iter()
        .map(worker)
        .collect::<Result<_, _>>()?;
    let q: Vec<f64> = results.iter().map(|r| r.0).collect();
    let taus: Vec<Option<f64>> = results.iter().map(|r| r.1).collect();
    let s = summarize_samples(&q);
    Ok(SensitivityEstimate {
        parameter: theta_name.to_owned(),
        method: Method::CfdPdmp,
        value: s.mean,
        stderr: s.stderr,
        n: opts.paths as u64,
        parts: None,
        wall_time_s: start.elapsed().as_secs_f64(),
        decouple_histogram: Some(decouple_histogram(&taus, horizon)),
    })
}

// ---------------------------------------------------------------------------
// Coupled finite differences, exact CTMC
// ---------------------------------------------------------------------------

/// Per-species multipliers `N0^-alpha_i` and the internal horizon
/// `N0^gamma * T` for scaled-units reporting.
pub struct ScaledView {
    pub state_scale: Vec<f64>,
    pub time_factor: f64,
}

impl ScaledView {
    pub fn from_spec(net: &ReactionNetwork, spec: &ScalingSpec) -> Result<Self, SensError> {
        let report = crate::scaling::analyze(net, spec).map_err(|e| SensError::BadRequest(e.to_string()))?;
        Ok(ScaledView {
            state_scale: spec
                .alpha
                .iter()
                .map(|&a| spec.n0.powf(-rat_f64(a)))
                .collect(),
            time_factor: spec.n0.powf(rat_f64(report.gamma_obs)),
        })
    }

    pub fn identity(n_species: usize) -> Self {
        ScaledView {
            state_scale: vec![1.0; n_species],
            time_factor: 1.0,
        }
    }

    fn scale_state(&self, raw: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(raw.iter().zip(&self.state_scale).map(|(x, s)| x * s));
    }
}

/// Split-coupled finite differences on the exact CTMC, with observables
/// applied to the scaled state so values are comparable with hybrid
/// estimates.
#[allow(clippy::too_many_arguments)]
pub fn cfd_ctmc(
    net: &ReactionNetwork,
    view: &ScaledView,
    observable: &str,
    theta_name: &str,
    horizon: f64,
    opts: &SensOptions,
    max_events: u64,
) -> Result<SensitivityEstimate, SensError> {
    let start = Instant::now();
    if opts.h < 0.0 || opts.h.is_nan() {
        return Err(SensError::BadRequest("h must be nonnegative for cfd".into()));
    }
    let theta0 = net.param_values[net
        .param_index(theta_name)
        .ok_or_else(|| ModelError::UnknownParameter {
            name: theta_name.into(),
        })?];
    let f = net.observable(observable)?.clone();
    let h_abs = absolute_step(opts.h, theta0);
    let denom_base = if h_abs == 0.0 { 1.0 } else { h_abs };
    let (theta_a, theta_b, denom) = if opts.central {
        (theta0 - h_abs, theta0 + h_abs, 2.0 * denom_base)
    } else {
        (theta0, theta0 + h_abs, denom_base)
    };
    let params_a = net.params_with(theta_name, theta_a)?;
    let params_b = net.params_with(theta_name, theta_b)?;
    let x0 = net.initial_copy_numbers();
    let internal_horizon = horizon * view.time_factor;

    let worker = |p: usize| -> Result<(f64, Option<f64>), SensError> {
        let mut rng = RngStream::derive(opts.seed, &[STREAM_CFD, p as u64]);
        let out = coupled_ctmc_pair(
            net,
            &params_a,
            &params_b,
            &x0,
            &x0,
            internal_horizon,
            &mut rng,
            max_events,
        )?;
        let mut stack = EvalStack::new();
        let mut scaled = Vec::new();
        view.scale_state(&out.final_a, &mut scaled);
        let fa = eval_observable(&f, &scaled, &params_a, &mut stack)?;
        view.scale_state(&out.final_b, &mut scaled);
        let fb = eval_observable(&f, &scaled, &params_b, &mut stack)?;
        Ok(((fb - fa) / denom, out.decouple_time))
    };

    let results: Vec<(f64, Option<f64>)> = (0..opts.paths)
        .into_par_iter()
        .map(worker)
        .collect::<Result<_, _>>()?;
    let q: Vec<f64> = results.iter().map(|r| r.0).collect();
    let taus: Vec<Option<f64>> = results.iter().map(|r| r.1).collect();
    let s = summarize_samples(&q);
    Ok(SensitivityEstimate {
        parameter: theta_name.to_owned(),
        method: Method::CfdCtmc,
        value: s.mean,
        stderr: s.stderr,
        n: opts.paths as u64,
        parts: None,
        wall_time_s: start.elapsed().as_secs_f64(),
        decouple_histogram: Some(decouple_histogram(&taus, internal_horizon)),
    })
}

// ---------------------------------------------------------------------------
// Auxiliary-path estimator on the exact CTMC
// ---------------------------------------------------------------------------

fn ctmc_rate_dtheta(
    net: &ReactionNetwork,
    k: usize,
    state: &[f64],
    params: &[f64],
    theta_index: usize,
    stack: &mut EvalStack,
) -> Result<f64, RateError> {
    let r = &net.reactions[k];
    match &r.rate {
        RateLaw::MassAction { kappa, scale } => {
            if !kappa.depends_on_param(theta_index) {
                return Ok(0.0);
            }
            let dk = kappa.derivative(
                EvalContext {
                    state: &[],
                    params,
                },
                SymbolRef::Param(theta_index),
                stack,
            )?;
            Ok(dk * scale * crate::model::mass_action_factor(r, state))
        }
        RateLaw::Custom { formula } => {
            if !formula.depends_on_param(theta_index) {
                return Ok(0.0);
            }
            Ok(formula.derivative(
                EvalContext { state, params },
                SymbolRef::Param(theta_index),
                stack,
            )?)
        }
    }
}

/// Auxiliary-path sensitivity estimator applied directly to the exact CTMC
/// (all reactions treated as jumps; the continuous contribution is zero).
#[allow(clippy::too_many_arguments)]
pub fn ipa_ctmc(
    net: &ReactionNetwork,
    view: &ScaledView,
    observable: &str,
    theta_name: &str,
    horizon: f64,
    opts: &SensOptions,
    max_events: u64,
) -> Result<SensitivityEstimate, SensError> {
    let start = Instant::now();
    let theta_index = net
        .param_index(theta_name)
        .ok_or_else(|| ModelError::UnknownParameter {
            name: theta_name.into(),
        })?;
    let f = net.observable(observable)?.clone();
    let params = net.param_values.clone();
    let x0 = net.initial_copy_numbers();
    let internal_horizon = horizon * view.time_factor;
    let m = opts.aux_times;
    if m == 0 {
        return Err(SensError::BadRequest("aux_times must be >= 1".into()));
    }
    // only parameter-dependent reactions need auxiliary pairs
    let active: Vec<usize> = (0..net.n_reactions())
        .filter(|&k| net.reactions[k].depends_on_param(theta_index))
        .collect();
    let required = opts.paths as u64 * active.len() as u64 * m as u64 * opts.aux_pairs as u64;
    if required > opts.aux_budget {
        return Err(SensError::AuxBudget {
            required,
            cap: opts.aux_budget,
        });
    }

    let worker = |p: usize| -> Result<f64, SensError> {
        let mut plan: Vec<(f64, usize, usize)> = Vec::new();
        let mut ts = RngStream::derive(opts.seed, &[STREAM_EVAL_TIMES, p as u64]);
        for (pos, _) in active.iter().enumerate() {
            for j in 0..m {
                plan.push((ts.next_f64() * internal_horizon, pos, j));
            }
        }
        plan.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite times"));
        let mut grid: Vec<f64> = plan.iter().map(|e| e.0).collect();
        grid.push(internal_horizon);

        let mut rng = RngStream::derive(opts.seed, &[STREAM_MAIN, p as u64]);
        let main = ssa_on_grid(net, &params, &x0, &grid, &mut rng, max_events)?;

        let mut stack = EvalStack::new();
        let mut contribution = 0.0;
        for (idx, &(_t, pos, j)) in plan.iter().enumerate() {
            let k = active[pos];
            let state = &main.states[idx];
            let weight = ctmc_rate_dtheta(net, k, state, &params, theta_index, &mut stack)?;
            if weight == 0.0 {
                continue;
            }
            let state_i: Vec<i64> = state.iter().map(|&x| x as i64).collect();
            let mut plus = state_i.clone();
            let mut feasible = true;
            for (i, &z) in net.reactions[k].zeta.iter().enumerate() {
                plus[i] += z;
                if plus[i] < 0 {
                    feasible = false;
                }
            }
            if !feasible {
                continue;
            }
            let remaining = internal_horizon - plan[idx].0;
            let mut diff_sum = 0.0;
            for pair in 0..opts.aux_pairs {
                let mut aux_rng = RngStream::derive(
                    opts.seed,
                    &[STREAM_AUX, p as u64, pos as u64, j as u64, pair as u64],
                );
                let coupled = coupled_ctmc_pair(
                    net,
                    &params,
                    &params,
                    &plus,
                    &state_i,
                    remaining,
                    &mut aux_rng,
                    max_events,
                )?;
                let mut scaled = Vec::new();
                view.scale_state(&coupled.final_a, &mut scaled);
                let fa = eval_observable(&f, &scaled, &params, &mut stack)?;
                view.scale_state(&coupled.final_b, &mut scaled);
                let fb = eval_observable(&f, &scaled, &params, &mut stack)?;
                diff_sum += fa - fb;
            }
            contribution += weight * (internal_horizon / m as f64) * diff_sum / opts.aux_pairs as f64;
        }
        Ok(contribution)
    };

    let q: Vec<f64> = (0..opts.paths)
        .into_par_iter()
        .map(worker)
        .collect::<Result<_, _>>()?;
    let s = summarize_samples(&q);
    Ok(SensitivityEstimate {
        parameter: theta_name.to_owned(),
        method: Method::IpaCtmc,
        value: s.mean,
        stderr: s.stderr,
        n: opts.paths as u64,
        parts: None,
        wall_time_s: start.elapsed().as_secs_f64(),
        decouple_histogram: None,
    })
}
