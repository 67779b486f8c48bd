//! Tilted discrete dynamics: an equivalent route to the discrete
//! sensitivity contribution.
//!
//! For each discrete reaction the tilted propensity
//!
//! ```text
//! lhat_k(x, u, theta0) = lambda_k(x, u, theta0)
//!                      + (theta0 - theta) * <grad lambda_k(x, u, theta), y_theta(s)>
//! ```
//!
//! matches the original rate at `theta0 = theta` and has
//! `d/dtheta0 lhat_k |_{theta0=theta} = D_theta lambda_k`, the total rate
//! derivative along the nominal path. Differentiating `E f(x_theta(T),
//! Uhat_theta0(T))` at `theta0 = theta` therefore reproduces the discrete
//! part of the decomposition; here it is probed by a common-noise forward
//! difference in `theta0`, where the nominal and tilted jump processes
//! consume the same per-reaction Poisson threshold sequences.

use rayon::prelude::*;
use std::time::Instant;

use crate::expr::EvalStack;
use crate::model::{ModelError, RateError};
use crate::rng::RngStream;
use crate::scaling::{guard_nonnegative, PdmpRateEvaluator, ReducedPdmp};
use crate::simulate::{SimError, StepConfig};
use crate::stats::summarize_samples;

use super::{Method, SensError, SensOptions, SensitivityEstimate, STREAM_TILT};

/// Evaluates tilted discrete rates pointwise (test and inspection surface;
/// campaigns inline the same arithmetic with cached evaluators).
pub struct TiltedModel<'a> {
    model: &'a ReducedPdmp,
    theta_index: usize,
    theta_nominal: f64,
}

impl<'a> TiltedModel<'a> {
    pub fn theta_index(&self) -> usize {
        self.theta_index
    }

    /// Tilted rate of discrete reaction `k` at hybrid state `state` with
    /// nominal sensitivity state `y`, for tilt parameter `theta0`.
    pub fn discrete_rate(
        &self,
        k: usize,
        state: &[f64],
        y: &[f64],
        theta0: f64,
    ) -> Result<f64, SensError> {
        let params_tilt = self
            .model
            .params_with(&self.model.param_names[self.theta_index], theta0)?;
        let mut eval_tilt = PdmpRateEvaluator::new(self.model, &params_tilt)?;
        let mut eval_nom = PdmpRateEvaluator::new(self.model, &self.model.param_values)?;
        let base = eval_tilt.rate(k, state, &params_tilt)?;
        let mut grad = vec![0.0; self.model.continuous.len()];
        eval_nom.rate_grad(k, state, &self.model.param_values, &mut grad)?;
        let correction: f64 = grad.iter().zip(y).map(|(g, yv)| g * yv).sum();
        Ok(base + (theta0 - self.theta_nominal) * correction)
    }
}

/// Build the tilted view of a reduced model around one parameter.
pub fn build_tilted_model<'a>(
    model: &'a ReducedPdmp,
    theta_name: &str,
) -> Result<TiltedModel<'a>, SensError> {
    let theta_index = model
        .param_index(theta_name)
        .ok_or_else(|| ModelError::UnknownParameter {
            name: theta_name.into(),
        })?;
    Ok(TiltedModel {
        model,
        theta_index,
        theta_nominal: model.param_values[theta_index],
    })
}

/// Lazily grown sequence of cumulative unit-exponential thresholds; the
/// nominal and tilted processes index into the same sequence, which is what
/// "driven by the same Poisson processes" means operationally.
struct SharedThresholds {
    stream: RngStream,
    cumulative: Vec<f64>,
}

impl SharedThresholds {
    fn new(stream: RngStream) -> Self {
        SharedThresholds {
            stream,
            cumulative: Vec::new(),
        }
    }

    fn get(&mut self, index: usize) -> f64 {
        while self.cumulative.len() <= index {
            let last = self.cumulative.last().copied().unwrap_or(0.0);
            self.cumulative.push(last + self.stream.unit_exponential());
        }
        self.cumulative[index]
    }
}

/// Forward difference over the tilt parameter under common noise:
/// `(E f(x_theta(T), Uhat_{theta+h}(T)) - E f(x_theta(T), U_theta(T))) / h`.
pub fn tilted_sensitivity_fd(
    model: &ReducedPdmp,
    observable: &str,
    theta_name: &str,
    horizon: f64,
    cfg: &StepConfig,
    opts: &SensOptions,
) -> Result<SensitivityEstimate, SensError> {
    let start = Instant::now();
    cfg.validate(horizon)?;
    if opts.h <= 0.0 || opts.h.is_nan() {
        return Err(SensError::BadRequest("h must be > 0".into()));
    }
    let theta_index = model
        .param_index(theta_name)
        .ok_or_else(|| ModelError::UnknownParameter {
            name: theta_name.into(),
        })?;
    let h_abs = super::absolute_step(opts.h, model.param_values[theta_index]);
    let theta0 = model.param_values[theta_index] + h_abs;
    let params = model.param_values.clone();
    let params_tilt = model.params_with(theta_name, theta0)?;
    let f = model.observable(observable)?.clone();
    let continuous_rx: Vec<usize> = model.continuous_reactions().map(|(k, _)| k).collect();
    let discrete_rx: Vec<usize> = model.discrete_reactions().map(|(k, _)| k).collect();
    let sc = model.continuous.len();

    let worker = |p: usize| -> Result<f64, SensError> {
        let mut eval_nom = PdmpRateEvaluator::new(model, &params)?;
        let mut eval_tilt = PdmpRateEvaluator::new(model, &params_tilt)?;
        let mut state = model.initial_state();
        // the tilted replica re-solves its own continuous flow (at the
        // nominal parameter) so jump perturbations propagate into f
        let mut state_hat = state.clone();
        // mixed view for the correction term: nominal continuous
        // coordinates, tilted discrete coordinates
        let mut state_mix = state.clone();
        let mut y = vec![0.0f64; sc];
        let mut grad = vec![0.0f64; sc];
        let mut dy = vec![0.0f64; sc];
        let mut dx = vec![0.0f64; sc];
        let mut dx_hat = vec![0.0f64; sc];
        let mut rates = vec![0.0f64; model.reactions.len()];
        let mut rates_hat_cont = vec![0.0f64; continuous_rx.len()];
        let mut rates_hat = vec![0.0f64; discrete_rx.len()];
        let mut internal_nom = vec![0.0f64; discrete_rx.len()];
        let mut internal_hat = vec![0.0f64; discrete_rx.len()];
        let mut next_nom = vec![0usize; discrete_rx.len()];
        let mut next_hat = vec![0usize; discrete_rx.len()];
        let mut thresholds: Vec<SharedThresholds> = (0..discrete_rx.len())
            .map(|pos| {
                SharedThresholds::new(RngStream::derive(
                    opts.seed,
                    &[STREAM_TILT, p as u64, pos as u64],
                ))
            })
            .collect();

        let dt = cfg.dt;
        let n_steps = (horizon / dt).ceil() as u64;
        for step in 0..n_steps {
            let t0 = step as f64 * dt;
            let t1 = ((step + 1) as f64 * dt).min(horizon);
            let h_step = t1 - t0;
            if h_step <= 0.0 {
                break;
            }

            for (k, rate) in rates.iter_mut().enumerate() {
                *rate = eval_nom.rate(k, &state, &params)?;
                if *rate < 0.0 {
                    return Err(RateError::Negative {
                        reaction: k,
                        value: *rate,
                    }
                    .into());
                }
            }
            for (slot, &k) in continuous_rx.iter().enumerate() {
                rates_hat_cont[slot] = eval_nom.rate(k, &state_hat, &params)?;
            }
            for (i, v) in state_mix.iter_mut().enumerate() {
                *v = state[i];
            }
            for &i in &model.discrete {
                state_mix[i] = state_hat[i];
            }
            for (pos, &k) in discrete_rx.iter().enumerate() {
                let base = eval_tilt.rate(k, &state_hat, &params_tilt)?;
                eval_nom.rate_grad(k, &state_mix, &params, &mut grad)?;
                let correction: f64 = grad.iter().zip(&y).map(|(g, yv)| g * yv).sum();
                rates_hat[pos] = (base + h_abs * correction).max(0.0);
            }

            // sensitivity pieces of the nominal path (left endpoint)
            dy.fill(0.0);
            for &k in &continuous_rx {
                let dtheta = eval_nom.rate_dtheta(k, &state, &params, theta_index)?;
                eval_nom.rate_grad(k, &state, &params, &mut grad)?;
                let gy: f64 = grad.iter().zip(&y).map(|(g, yv)| g * yv).sum();
                let weight = dtheta + gy;
                let zeta = &model.reactions[k].zeta_hat;
                for (slot, &i) in model.continuous.iter().enumerate() {
                    dy[slot] += weight * zeta[i] as f64;
                }
            }

            dx.fill(0.0);
            dx_hat.fill(0.0);
            for (cslot, &k) in continuous_rx.iter().enumerate() {
                let zeta = &model.reactions[k].zeta_hat;
                for (slot, &i) in model.continuous.iter().enumerate() {
                    dx[slot] += rates[k] * zeta[i] as f64;
                    dx_hat[slot] += rates_hat_cont[cslot] * zeta[i] as f64;
                }
            }
            for (slot, &i) in model.continuous.iter().enumerate() {
                state[i] += dx[slot] * h_step;
                state_hat[i] += dx_hat[slot] * h_step;
            }
            for (slot, yv) in y.iter_mut().enumerate() {
                *yv += dy[slot] * h_step;
            }
            for (pos, &k) in discrete_rx.iter().enumerate() {
                internal_nom[pos] += rates[k] * h_step;
                internal_hat[pos] += rates_hat[pos] * h_step;
            }
            guard_nonnegative(&mut state, &model.continuous)?;
            guard_nonnegative(&mut state_hat, &model.continuous)?;
            for &i in &model.continuous {
                if !state[i].is_finite() || !state_hat[i].is_finite() {
                    return Err(SimError::NonFiniteState { t: t1 }.into());
                }
            }

            for (pos, &k) in discrete_rx.iter().enumerate() {
                let zeta = &model.reactions[k].zeta_hat;
                while internal_nom[pos] > thresholds[pos].get(next_nom[pos]) {
                    let feasible = model
                        .discrete
                        .iter()
                        .all(|&i| state[i] + zeta[i] as f64 >= 0.0);
                    if !feasible {
                        break;
                    }
                    for &i in &model.discrete {
                        state[i] += zeta[i] as f64;
                    }
                    next_nom[pos] += 1;
                }
                while internal_hat[pos] > thresholds[pos].get(next_hat[pos]) {
                    let feasible = model
                        .discrete
                        .iter()
                        .all(|&i| state_hat[i] + zeta[i] as f64 >= 0.0);
                    if !feasible {
                        break;
                    }
                    for &i in &model.discrete {
                        state_hat[i] += zeta[i] as f64;
                    }
                    next_hat[pos] += 1;
                }
            }
        }

        let mut stack = EvalStack::new();
        let f_nom = super::eval_observable(&f, &state, &params, &mut stack)?;
        let f_hat = super::eval_observable(&f, &state_hat, &params, &mut stack)?;
        Ok((f_hat - f_nom) / h_abs)
    };

    let q: Vec<f64> = (0..opts.paths)
        .into_par_iter()
        .map(worker)
        .collect::<Result<_, _>>()?;
    let s = summarize_samples(&q);
    Ok(SensitivityEstimate {
        parameter: theta_name.to_owned(),
        method: Method::PdmpDecomposition,
        value: s.mean,
        stderr: s.stderr,
        n: opts.paths as u64,
        parts: None,
        wall_time_s: start.elapsed().as_secs_f64(),
        decouple_histogram: None,
    })
}
