//! Exact CTMC path simulators: Gillespie's direct method, the next reaction
//! method built on unit-rate Poisson time changes, and the scaled process
//! view used for convergence studies.

use crate::model::{PropensityEvaluator, RateError, ReactionNetwork};
use crate::rng::RngStream;
use crate::scaling::{params_at_scale, rat_f64, ScalingSpec};
use crate::simulate::SimError;

/// A fully recorded jump path.
#[derive(Debug, Clone)]
pub struct CtmcPath {
    pub initial: Vec<i64>,
    /// Strictly increasing event times in `(0, horizon)`.
    pub times: Vec<f64>,
    /// Index of the reaction fired at each event.
    pub reactions: Vec<usize>,
    /// State after each event.
    pub states: Vec<Vec<i64>>,
    pub final_time: f64,
    pub final_state: Vec<i64>,
}

/// Grid-sampled path (states as reals, one row per grid time).
#[derive(Debug, Clone)]
pub struct GridPath {
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub n_events: u64,
}

fn check_nonnegative(state: &[f64], t: f64) -> Result<(), SimError> {
    for (i, &x) in state.iter().enumerate() {
        if x < 0.0 {
            return Err(SimError::NegativeCount { t, species: i });
        }
    }
    Ok(())
}

struct DirectStepper<'a> {
    net: &'a ReactionNetwork,
    params: &'a [f64],
    evaluator: PropensityEvaluator<'a>,
    rates: Vec<f64>,
}

impl<'a> DirectStepper<'a> {
    fn new(net: &'a ReactionNetwork, params: &'a [f64]) -> Result<Self, SimError> {
        let evaluator = PropensityEvaluator::new(net, params)?;
        Ok(DirectStepper {
            net,
            params,
            evaluator,
            rates: vec![0.0; net.n_reactions()],
        })
    }

    fn total_rate(&mut self, state: &[f64]) -> Result<f64, SimError> {
        let mut total = 0.0;
        for k in 0..self.net.n_reactions() {
            let r = self.evaluator.rate(k, state, self.params)?;
            if r < 0.0 {
                return Err(RateError::Negative {
                    reaction: k,
                    value: r,
                }
                .into());
            }
            self.rates[k] = r;
            total += r;
        }
        Ok(total)
    }

    fn select(&self, total: f64, u: f64) -> usize {
        let target = u * total;
        let mut acc = 0.0;
        for (k, &r) in self.rates.iter().enumerate() {
            acc += r;
            if acc >= target && r > 0.0 {
                return k;
            }
        }
        // float roundoff: fall back to the last positive-rate reaction
        self.rates
            .iter()
            .rposition(|&r| r > 0.0)
            .expect("total rate positive")
    }
}

/// Gillespie direct method on `[0, horizon]`, recording every event.
pub fn ssa_direct(
    net: &ReactionNetwork,
    params: &[f64],
    x0: &[i64],
    horizon: f64,
    rng: &mut RngStream,
    max_events: u64,
) -> Result<CtmcPath, SimError> {
    let mut stepper = DirectStepper::new(net, params)?;
    let mut state: Vec<f64> = x0.iter().map(|&x| x as f64).collect();
    check_nonnegative(&state, 0.0)?;
    let mut path = CtmcPath {
        initial: x0.to_vec(),
        times: Vec::new(),
        reactions: Vec::new(),
        states: Vec::new(),
        final_time: horizon,
        final_state: x0.to_vec(),
    };
    let mut t = 0.0;
    loop {
        let total = stepper.total_rate(&state)?;
        if total <= 0.0 {
            break; // absorbed
        }
        let wait = rng.unit_exponential() / total;
        let t_next = t + wait;
        if t_next >= horizon {
            break;
        }
        let k = stepper.select(total, rng.next_f64());
        for (i, z) in net.reactions[k].zeta.iter().enumerate() {
            state[i] += *z as f64;
        }
        check_nonnegative(&state, t_next)?;
        t = t_next;
        path.times.push(t);
        path.reactions.push(k);
        path.states.push(state.iter().map(|&x| x as i64).collect());
        if path.times.len() as u64 >= max_events {
            path.final_time = t;
            path.final_state = state.iter().map(|&x| x as i64).collect();
            let events = path.times.len() as u64;
            return Err(SimError::MaxEventsExceeded {
                t,
                events,
                partial: Box::new(path),
            });
        }
    }
    path.final_state = state.iter().map(|&x| x as i64).collect();
    Ok(path)
}

/// Direct method sampled on a time grid (no per-event storage).
pub fn ssa_on_grid(
    net: &ReactionNetwork,
    params: &[f64],
    x0: &[i64],
    grid: &[f64],
    rng: &mut RngStream,
    max_events: u64,
) -> Result<GridPath, SimError> {
    let horizon = grid.last().copied().unwrap_or(0.0);
    let mut stepper = DirectStepper::new(net, params)?;
    let mut state: Vec<f64> = x0.iter().map(|&x| x as f64).collect();
    check_nonnegative(&state, 0.0)?;
    let mut out = GridPath {
        grid: grid.to_vec(),
        states: Vec::with_capacity(grid.len()),
        n_events: 0,
    };
    let mut cursor = 0usize;
    let mut t = 0.0;
    loop {
        let total = stepper.total_rate(&state)?;
        let t_next = if total > 0.0 {
            t + rng.unit_exponential() / total
        } else {
            f64::INFINITY
        };
        while cursor < grid.len() && grid[cursor] < t_next {
            out.states.push(state.clone());
            cursor += 1;
        }
        if cursor >= grid.len() || t_next >= horizon {
            break;
        }
        let k = stepper.select(total, rng.next_f64());
        for (i, z) in net.reactions[k].zeta.iter().enumerate() {
            state[i] += *z as f64;
        }
        check_nonnegative(&state, t_next)?;
        t = t_next;
        out.n_events += 1;
        if out.n_events >= max_events {
            return Err(SimError::MaxEventsExceeded {
                t,
                events: out.n_events,
                partial: Box::new(CtmcPath {
                    initial: x0.to_vec(),
                    times: Vec::new(),
                    reactions: Vec::new(),
                    states: Vec::new(),
                    final_time: t,
                    final_state: state.iter().map(|&x| x as i64).collect(),
                }),
            });
        }
    }
    while cursor < grid.len() {
        out.states.push(state.clone());
        cursor += 1;
    }
    Ok(out)
}

/// Next reaction method: per-reaction internal times against unit-exponential
/// thresholds. Distributionally equivalent to the direct method.
pub fn nrm_time_change(
    net: &ReactionNetwork,
    params: &[f64],
    x0: &[i64],
    horizon: f64,
    rng: &mut RngStream,
    max_events: u64,
) -> Result<CtmcPath, SimError> {
    let n_reactions = net.n_reactions();
    let mut evaluator = PropensityEvaluator::new(net, params)?;
    let mut state: Vec<f64> = x0.iter().map(|&x| x as f64).collect();
    check_nonnegative(&state, 0.0)?;
    // internal clocks, thresholds drawn in ascending reaction order
    let mut internal = vec![0.0f64; n_reactions];
    let mut thresholds: Vec<f64> = (0..n_reactions).map(|_| rng.unit_exponential()).collect();
    let mut rates = vec![0.0f64; n_reactions];
    let mut path = CtmcPath {
        initial: x0.to_vec(),
        times: Vec::new(),
        reactions: Vec::new(),
        states: Vec::new(),
        final_time: horizon,
        final_state: x0.to_vec(),
    };
    let mut t = 0.0;
    loop {
        for (k, rate) in rates.iter_mut().enumerate() {
            let r = evaluator.rate(k, &state, params)?;
            if r < 0.0 {
                return Err(RateError::Negative {
                    reaction: k,
                    value: r,
                }
                .into());
            }
            *rate = r;
        }
        let mut best: Option<(usize, f64)> = None;
        for k in 0..n_reactions {
            if rates[k] > 0.0 {
                let wait = (thresholds[k] - internal[k]) / rates[k];
                if best.is_none_or(|(_, w)| wait < w) {
                    best = Some((k, wait));
                }
            }
        }
        let Some((k, wait)) = best else { break };
        let t_next = t + wait;
        if t_next >= horizon {
            break;
        }
        for j in 0..n_reactions {
            internal[j] += rates[j] * wait;
        }
        thresholds[k] += rng.unit_exponential();
        for (i, z) in net.reactions[k].zeta.iter().enumerate() {
            state[i] += *z as f64;
        }
        check_nonnegative(&state, t_next)?;
        t = t_next;
        path.times.push(t);
        path.reactions.push(k);
        path.states.push(state.iter().map(|&x| x as i64).collect());
        if path.times.len() as u64 >= max_events {
            path.final_time = t;
            path.final_state = state.iter().map(|&x| x as i64).collect();
            let events = path.times.len() as u64;
            return Err(SimError::MaxEventsExceeded {
                t,
                events,
                partial: Box::new(path),
            });
        }
    }
    path.final_state = state.iter().map(|&x| x as i64).collect();
    Ok(path)
}

/// Scaled process `Z(t) = diag(N^-alpha) X(N^gamma t)` sampled on `grid`
/// (grid in scaled time). The reference-scale parameter is substituted with
/// `n` before simulation.
#[allow(clippy::too_many_arguments)]
pub fn simulate_scaled(
    net: &ReactionNetwork,
    spec: &ScalingSpec,
    n: f64,
    gamma: f64,
    params: &[f64],
    grid: &[f64],
    rng: &mut RngStream,
    max_events: u64,
) -> Result<GridPath, SimError> {
    let params_n = params_at_scale(net, params, n);
    let time_factor = n.powf(gamma);
    let internal_grid: Vec<f64> = grid.iter().map(|&g| g * time_factor).collect();
    let x0 = net.initial_copy_numbers();
    let raw = ssa_on_grid(net, &params_n, &x0, &internal_grid, rng, max_events)?;
    let scale: Vec<f64> = spec
        .alpha
        .iter()
        .map(|&a| n.powf(-rat_f64(a)))
        .collect();
    Ok(GridPath {
        grid: grid.to_vec(),
        states: raw
            .states
            .into_iter()
            .map(|row| row.iter().zip(&scale).map(|(x, s)| x * s).collect())
            .collect(),
        n_events: raw.n_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_model, ModelDocument};

    fn birth_death(theta: f64) -> ReactionNetwork {
        let doc = ModelDocument::from_json(&format!(
            r#"{{
              "species": [{{"name": "s", "initial": 0}}],
              "reactions": [
                {{"name": "birth", "products": {{"s": 1}},
                  "rate": {{"type": "mass_action", "kappa": "theta"}}}},
                {{"name": "death", "reactants": {{"s": 1}}, "products": {{}},
                  "rate": {{"type": "mass_action", "kappa": "1"}}}}
              ],
              "parameters": {{"theta": {theta}}},
              "observables": {{"count": "s"}}
            }}"#
        ))
        .unwrap();
        load_model(&doc).unwrap()
    }

    #[test]
    fn absorbing_state_gives_empty_path() {
        // birth rate 0, start at 0: death rate also 0
        let net = birth_death(0.0);
        let mut rng = RngStream::new(1, 0);
        let path = ssa_direct(&net, &[0.0], &[0], 10.0, &mut rng, 1_000).unwrap();
        assert!(path.times.is_empty());
        assert_eq!(path.final_state, vec![0]);
    }

    #[test]
    fn deterministic_under_fixed_stream() {
        let net = birth_death(10.0);
        let run = |seed| {
            let mut rng = RngStream::new(seed, 3);
            ssa_direct(&net, &[10.0], &[0], 1.0, &mut rng, 100_000).unwrap()
        };
        let (a, b) = (run(42), run(42));
        assert_eq!(a.times, b.times);
        assert_eq!(a.reactions, b.reactions);
        let c = run(43);
        assert_ne!(a.times, c.times);
    }

    #[test]
    fn nrm_single_constant_rate_clock_inversion() {
        // one reaction at constant rate 1; with the first threshold draw u,
        // the first event lands at t = -ln(u)
        let doc = ModelDocument::from_json(
            r#"{
              "species": [{"name": "s", "initial": 0}],
              "reactions": [
                {"name": "birth", "products": {"s": 1},
                 "rate": {"type": "mass_action", "kappa": "1"}}
              ],
              "parameters": {}
            }"#,
        )
        .unwrap();
        let net = load_model(&doc).unwrap();
        let mut probe = RngStream::new(7, 1);
        let expected_first = probe.unit_exponential();
        let mut rng = RngStream::new(7, 1);
        let path = nrm_time_change(&net, &[], &[0], 50.0, &mut rng, 1000).unwrap();
        assert!((path.times[0] - expected_first).abs() < 1e-12);
    }

    #[test]
    fn grid_sampling_matches_full_path() {
        let net = birth_death(10.0);
        let full = {
            let mut rng = RngStream::new(9, 0);
            ssa_direct(&net, &[10.0], &[0], 2.0, &mut rng, 100_000).unwrap()
        };
        let sampled = {
            let mut rng = RngStream::new(9, 0);
            ssa_on_grid(&net, &[10.0], &[0], &[0.0, 0.5, 1.0, 2.0], &mut rng, 100_000).unwrap()
        };
        // state at grid time = state after last event before it
        for (gi, &g) in [0.0, 0.5, 1.0, 2.0].iter().enumerate() {
            let mut expect = 0.0;
            for (ei, &et) in full.times.iter().enumerate() {
                if et < g {
                    expect = full.states[ei][0] as f64;
                }
            }
            assert_eq!(sampled.states[gi][0], expect, "grid {g}");
        }
    }

    #[test]
    fn scaled_identity_when_alpha_zero_and_n_one() {
        let net = birth_death(10.0);
        let sdoc = crate::scaling::ScalingDocument::from_json(
            r#"{"alpha": {"s": "0"}, "beta": {"birth": "0", "death": "0"},
                "N0": 1000.0, "gamma": "0"}"#,
        )
        .unwrap();
        let spec = crate::scaling::bind_scaling(&sdoc, &net).unwrap();
        let grid = [0.0, 0.5, 1.0];
        let a = {
            let mut rng = RngStream::new(5, 0);
            simulate_scaled(&net, &spec, 1.0, 0.0, &[10.0], &grid, &mut rng, 100_000).unwrap()
        };
        let b = {
            let mut rng = RngStream::new(5, 0);
            ssa_on_grid(&net, &[10.0], &[0], &grid, &mut rng, 100_000).unwrap()
        };
        assert_eq!(a.states, b.states);
    }
}
