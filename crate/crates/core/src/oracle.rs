//! Brute-force references: truncated chemical-master-equation integration
//! on an explicitly enumerated state space, finite-difference sensitivities
//! of the CME mean, and closed-form immigration-death moments.
//!
//! Truncation is reflecting: any reaction that would leave the box is
//! suppressed at its source state, so total probability is conserved
//! exactly and the truncation error shows up as bias, bounded by the mass
//! that piles up on the boundary (reported as a tail heuristic).

use thiserror::Error;

use crate::expr::EvalStack;
use crate::model::{ModelError, RateError, ReactionNetwork};

pub const DEFAULT_STATE_CAP: usize = 200_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("state space has {n_states} states, exceeding the cap {cap}")]
    CapExceeded { n_states: usize, cap: usize },
    #[error("bounds must cover the initial state (species {species})")]
    InitialOutsideBounds { species: usize },
    #[error("negative probability {value} at state {state} (integration failure)")]
    NegativeProbability { state: usize, value: f64 },
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Box-truncated state space `0..=bound_i` per species, enumerated
/// lexicographically (first species most significant).
#[derive(Debug, Clone)]
pub struct TruncatedStateSpace {
    pub bounds: Vec<i64>,
    strides: Vec<usize>,
    pub n_states: usize,
}

impl TruncatedStateSpace {
    pub fn new(bounds: Vec<i64>, cap: usize) -> Result<Self, OracleError> {
        if bounds.iter().any(|&b| b < 0) {
            return Err(OracleError::BadConfig("bounds must be nonnegative".into()));
        }
        let mut n_states = 1usize;
        for &b in &bounds {
            n_states = n_states
                .checked_mul((b + 1) as usize)
                .ok_or(OracleError::CapExceeded {
                    n_states: usize::MAX,
                    cap,
                })?;
        }
        if n_states > cap {
            return Err(OracleError::CapExceeded { n_states, cap });
        }
        let mut strides = vec![1usize; bounds.len()];
        for i in (0..bounds.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (bounds[i + 1] + 1) as usize;
        }
        Ok(TruncatedStateSpace {
            bounds,
            strides,
            n_states,
        })
    }

    pub fn contains(&self, state: &[i64]) -> bool {
        state
            .iter()
            .zip(&self.bounds)
            .all(|(&x, &b)| (0..=b).contains(&x))
    }

    pub fn ordinal(&self, state: &[i64]) -> usize {
        state
            .iter()
            .zip(&self.strides)
            .map(|(&x, &s)| x as usize * s)
            .sum()
    }

    pub fn state(&self, ordinal: usize) -> Vec<i64> {
        let mut rem = ordinal;
        self.strides
            .iter()
            .map(|&s| {
                let x = rem / s;
                rem %= s;
                x as i64
            })
            .collect()
    }
}

/// Probability vector over the truncated space at the final time.
#[derive(Debug, Clone)]
pub struct CmeSolution {
    pub probabilities: Vec<f64>,
    /// Mass on states with any coordinate at its bound: truncation-bias
    /// heuristic (leakage itself is exactly zero under reflection).
    pub boundary_mass: f64,
    /// Probability lost to truncation; identically zero under the
    /// reflecting policy.
    pub leakage: f64,
}

struct Transition {
    source: u32,
    target: u32,
    rate: f64,
}

fn build_transitions(
    net: &ReactionNetwork,
    params: &[f64],
    space: &TruncatedStateSpace,
) -> Result<Vec<Transition>, OracleError> {
    let mut stack = EvalStack::new();
    let mut transitions = Vec::new();
    let mut state_f = vec![0.0f64; net.n_species()];
    for s in 0..space.n_states {
        let state = space.state(s);
        for (i, &x) in state.iter().enumerate() {
            state_f[i] = x as f64;
        }
        for (k, r) in net.reactions.iter().enumerate() {
            let target: Vec<i64> = state.iter().zip(&r.zeta).map(|(&x, &z)| x + z).collect();
            if !space.contains(&target) {
                continue; // reflecting truncation: suppress the outflow
            }
            let rate = net.propensity(k, &state_f, params, &mut stack)?;
            if rate < 0.0 {
                return Err(RateError::Negative {
                    reaction: k,
                    value: rate,
                }
                .into());
            }
            if rate > 0.0 {
                transitions.push(Transition {
                    source: s as u32,
                    target: space.ordinal(&target) as u32,
                    rate,
                });
            }
        }
    }
    Ok(transitions)
}

fn derivative(transitions: &[Transition], p: &[f64], dp: &mut [f64]) {
    dp.fill(0.0);
    for t in transitions {
        let flow = t.rate * p[t.source as usize];
        dp[t.source as usize] -= flow;
        dp[t.target as usize] += flow;
    }
}

/// Integrate the truncated CME with classical RK4 at fixed step `dt`.
pub fn cme_solve(
    net: &ReactionNetwork,
    params: &[f64],
    space: &TruncatedStateSpace,
    initial: &[i64],
    horizon: f64,
    dt: f64,
) -> Result<CmeSolution, OracleError> {
    if dt <= 0.0 || dt.is_nan() {
        return Err(OracleError::BadConfig(format!("dt = {dt} must be > 0")));
    }
    if !space.contains(initial) {
        let bad = initial
            .iter()
            .zip(&space.bounds)
            .position(|(&x, &b)| !(0..=b).contains(&x))
            .unwrap_or(0);
        return Err(OracleError::InitialOutsideBounds { species: bad });
    }
    let transitions = build_transitions(net, params, space)?;
    let n = space.n_states;
    let mut p = vec![0.0f64; n];
    p[space.ordinal(initial)] = 1.0;

    let mut k1 = vec![0.0f64; n];
    let mut k2 = vec![0.0f64; n];
    let mut k3 = vec![0.0f64; n];
    let mut k4 = vec![0.0f64; n];
    let mut tmp = vec![0.0f64; n];

    let n_steps = (horizon / dt).ceil() as u64;
    for step in 0..n_steps {
        let t0 = step as f64 * dt;
        let t1 = ((step + 1) as f64 * dt).min(horizon);
        let h = t1 - t0;
        if h <= 0.0 {
            break;
        }
        derivative(&transitions, &p, &mut k1);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * h * k1[i];
        }
        derivative(&transitions, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * h * k2[i];
        }
        derivative(&transitions, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = p[i] + h * k3[i];
        }
        derivative(&transitions, &tmp, &mut k4);
        for i in 0..n {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    for (s, &v) in p.iter().enumerate() {
        if v < -1e-9 {
            return Err(OracleError::NegativeProbability { state: s, value: v });
        }
    }

    let mut boundary_mass = 0.0;
    for (s, &v) in p.iter().enumerate() {
        let state = space.state(s);
        if state.iter().zip(&space.bounds).any(|(&x, &b)| x == b && b > 0) {
            boundary_mass += v;
        }
    }
    Ok(CmeSolution {
        probabilities: p,
        boundary_mass,
        leakage: 0.0,
    })
}

/// Expectation of an observable under a CME solution.
pub fn cme_mean(
    net: &ReactionNetwork,
    space: &TruncatedStateSpace,
    solution: &CmeSolution,
    observable: &str,
    params: &[f64],
) -> Result<f64, OracleError> {
    let f = net.observable(observable)?;
    let mut stack = EvalStack::new();
    let mut acc = 0.0;
    let mut state_f = vec![0.0f64; net.n_species()];
    for (s, &prob) in solution.probabilities.iter().enumerate() {
        if prob == 0.0 {
            continue;
        }
        let state = space.state(s);
        for (i, &x) in state.iter().enumerate() {
            state_f[i] = x as f64;
        }
        let v = f
            .eval(
                crate::expr::EvalContext {
                    state: &state_f,
                    params,
                },
                &mut stack,
            )
            .map_err(RateError::from)?;
        acc += prob * v;
    }
    Ok(acc)
}

/// Central finite difference of the CME mean w.r.t. one parameter.
#[allow(clippy::too_many_arguments)]
pub fn cme_sensitivity_fd(
    net: &ReactionNetwork,
    theta_name: &str,
    space: &TruncatedStateSpace,
    initial: &[i64],
    horizon: f64,
    dt: f64,
    h: f64,
    observable: &str,
) -> Result<f64, OracleError> {
    let theta0 = net.param_values[net
        .param_index(theta_name)
        .ok_or_else(|| ModelError::UnknownParameter {
            name: theta_name.into(),
        })?];
    let run = |theta: f64| -> Result<f64, OracleError> {
        let params = net.params_with(theta_name, theta)?;
        let sol = cme_solve(net, &params, space, initial, horizon, dt)?;
        cme_mean(net, space, &sol, observable, &params)
    };
    let hi = run(theta0 + h)?;
    let lo = run(theta0 - h)?;
    Ok((hi - lo) / (2.0 * h))
}

/// Immigration-death closed forms: mean of `X(t)` for birth rate `theta`,
/// unit-capacity death rate `delta`, `X(0) = 0`, and its sensitivity
/// w.r.t. the birth rate.
pub fn birth_death_reference(theta_birth: f64, rate_death: f64, t: f64) -> (f64, f64) {
    assert!(rate_death > 0.0, "death rate must be positive");
    let shape = (1.0 - (-rate_death * t).exp()) / rate_death;
    (theta_birth * shape, shape)
}
