//! Split coupling of process pairs.
//!
//! Two processes driven by the same reaction set share a common Poisson
//! clock per reaction running at the minimum of their two propensities,
//! plus one residual clock each carrying the excess. At every evaluation
//! point at most one residual rate is positive, and when the processes
//! coincide (equal parameters, equal state) both residuals vanish, so the
//! coupled pair degenerates to two identical paths.
//!
//! The hybrid variant steps both continuous flows on the shared Euler grid
//! with three internal-time clocks per discrete reaction; the CTMC variant
//! is an exact direct-method simulation over the 3K coupled clocks.

use crate::model::{PropensityEvaluator, RateError, ReactionNetwork};
use crate::rng::RngStream;
use crate::scaling::{guard_nonnegative, PdmpRateEvaluator, ReducedPdmp};
use crate::simulate::{SimError, StepConfig};

/// Terminal summary of one coupled pair.
#[derive(Debug, Clone)]
pub struct CoupledOutcome {
    pub final_a: Vec<f64>,
    pub final_b: Vec<f64>,
    /// First time the two discrete states differed, if they ever did.
    pub decouple_time: Option<f64>,
    /// Largest observed product of the two residual rates (identically zero
    /// by construction; kept as a health diagnostic).
    pub residual_product_max: f64,
    pub n_firings: u64,
}

/// Coupled-pair request over one reduced model. The two marginals may
/// differ in parameters (finite-difference probes) or in initial state
/// (auxiliary perturbation paths), or both.
#[derive(Debug, Clone, Copy)]
pub struct CoupledPdmpRun<'a> {
    pub params_a: &'a [f64],
    pub params_b: &'a [f64],
    pub initial_a: &'a [f64],
    pub initial_b: &'a [f64],
    pub horizon: f64,
    pub cfg: &'a StepConfig,
}

/// Simulate a split-coupled pair of hybrid paths.
pub fn coupled_pdmp_pair(
    model: &ReducedPdmp,
    run: CoupledPdmpRun<'_>,
    rng: &mut RngStream,
) -> Result<CoupledOutcome, SimError> {
    run.cfg.validate(run.horizon)?;
    let n_rx = model.reactions.len();
    let continuous_rx: Vec<usize> = model.continuous_reactions().map(|(k, _)| k).collect();
    let discrete_rx: Vec<usize> = model.discrete_reactions().map(|(k, _)| k).collect();
    let nd = discrete_rx.len();

    let mut eval_a = PdmpRateEvaluator::new(model, run.params_a)?;
    let mut eval_b = PdmpRateEvaluator::new(model, run.params_b)?;
    let mut state_a = run.initial_a.to_vec();
    let mut state_b = run.initial_b.to_vec();

    // three clocks per discrete reaction: common, residual-a, residual-b;
    // thresholds drawn grouped per reaction in ascending reaction order
    let mut internal = vec![0.0f64; 3 * nd];
    let mut thresholds = vec![0.0f64; 3 * nd];
    for slot in thresholds.iter_mut() {
        *slot = rng.unit_exponential();
    }

    let mut rates_a = vec![0.0f64; n_rx];
    let mut rates_b = vec![0.0f64; n_rx];

    let mut outcome = CoupledOutcome {
        final_a: Vec::new(),
        final_b: Vec::new(),
        decouple_time: None,
        residual_product_max: 0.0,
        n_firings: 0,
    };

    let dt = run.cfg.dt;
    let n_steps = (run.horizon / dt).ceil() as u64;
    for step in 0..n_steps {
        let t0 = step as f64 * dt;
        let t1 = ((step + 1) as f64 * dt).min(run.horizon);
        let h = t1 - t0;
        if h <= 0.0 {
            break;
        }

        for k in 0..n_rx {
            let ra = eval_a.rate(k, &state_a, run.params_a)?;
            let rb = eval_b.rate(k, &state_b, run.params_b)?;
            if ra < 0.0 || rb < 0.0 {
                return Err(RateError::Negative {
                    reaction: k,
                    value: ra.min(rb),
                }
                .into());
            }
            rates_a[k] = ra;
            rates_b[k] = rb;
        }

        for &kc in &continuous_rx {
            let zeta = &model.reactions[kc].zeta_hat;
            for &i in &model.continuous {
                let z = zeta[i] as f64;
                state_a[i] += rates_a[kc] * z * h;
                state_b[i] += rates_b[kc] * z * h;
            }
        }

        for (pos, &k) in discrete_rx.iter().enumerate() {
            let common = rates_a[k].min(rates_b[k]);
            let res_a = rates_a[k] - common;
            let res_b = rates_b[k] - common;
            outcome.residual_product_max = outcome.residual_product_max.max(res_a * res_b);
            internal[3 * pos] += common * h;
            internal[3 * pos + 1] += res_a * h;
            internal[3 * pos + 2] += res_b * h;
        }

        guard_nonnegative(&mut state_a, &model.continuous)?;
        guard_nonnegative(&mut state_b, &model.continuous)?;
        for &i in &model.continuous {
            if !state_a[i].is_finite() || !state_b[i].is_finite() {
                return Err(SimError::NonFiniteState { t: t1 });
            }
        }

        for (pos, &k) in discrete_rx.iter().enumerate() {
            let zeta = &model.reactions[k].zeta_hat;
            for clock in 0..3 {
                let slot = 3 * pos + clock;
                while internal[slot] > thresholds[slot] {
                    let jump_a = clock == 0 || clock == 1;
                    let jump_b = clock == 0 || clock == 2;
                    let feasible_a = !jump_a
                        || model
                            .discrete
                            .iter()
                            .all(|&i| state_a[i] + zeta[i] as f64 >= 0.0);
                    let feasible_b = !jump_b
                        || model
                            .discrete
                            .iter()
                            .all(|&i| state_b[i] + zeta[i] as f64 >= 0.0);
                    if !feasible_a || !feasible_b {
                        break;
                    }
                    if jump_a {
                        for &i in &model.discrete {
                            state_a[i] += zeta[i] as f64;
                        }
                    }
                    if jump_b {
                        for &i in &model.discrete {
                            state_b[i] += zeta[i] as f64;
                        }
                    }
                    thresholds[slot] += rng.unit_exponential();
                    outcome.n_firings += 1;
                    if outcome.n_firings > run.cfg.max_events {
                        return Err(SimError::EventBudget {
                            t: t1,
                            events: outcome.n_firings,
                        });
                    }
                }
            }
        }

        if outcome.decouple_time.is_none() {
            let diverged = model.discrete.iter().any(|&i| state_a[i] != state_b[i]);
            if diverged {
                outcome.decouple_time = Some(t1);
            }
        }
    }

    outcome.final_a = state_a;
    outcome.final_b = state_b;
    Ok(outcome)
}

/// Terminal summary of one split-coupled CTMC pair (exact simulation).
#[derive(Debug, Clone)]
pub struct CoupledCtmcOutcome {
    pub final_a: Vec<f64>,
    pub final_b: Vec<f64>,
    pub decouple_time: Option<f64>,
    pub n_events: u64,
}

/// Split-coupled pair of exact CTMCs via the direct method over the 3K
/// coupled clocks (common at `min`, one residual each side).
#[allow(clippy::too_many_arguments)]
pub fn coupled_ctmc_pair(
    net: &ReactionNetwork,
    params_a: &[f64],
    params_b: &[f64],
    initial_a: &[i64],
    initial_b: &[i64],
    horizon: f64,
    rng: &mut RngStream,
    max_events: u64,
) -> Result<CoupledCtmcOutcome, SimError> {
    let n_rx = net.n_reactions();
    let mut eval_a = PropensityEvaluator::new(net, params_a)?;
    let mut eval_b = PropensityEvaluator::new(net, params_b)?;
    let mut state_a: Vec<f64> = initial_a.iter().map(|&x| x as f64).collect();
    let mut state_b: Vec<f64> = initial_b.iter().map(|&x| x as f64).collect();

    // clock layout per reaction: [common, residual-a, residual-b]
    let mut clock_rates = vec![0.0f64; 3 * n_rx];
    let mut outcome = CoupledCtmcOutcome {
        final_a: Vec::new(),
        final_b: Vec::new(),
        decouple_time: None,
        n_events: 0,
    };
    let mut t = 0.0;
    loop {
        let mut total = 0.0;
        for k in 0..n_rx {
            let ra = eval_a.rate(k, &state_a, params_a)?;
            let rb = eval_b.rate(k, &state_b, params_b)?;
            if ra < 0.0 || rb < 0.0 {
                return Err(RateError::Negative {
                    reaction: k,
                    value: ra.min(rb),
                }
                .into());
            }
            let common = ra.min(rb);
            clock_rates[3 * k] = common;
            clock_rates[3 * k + 1] = ra - common;
            clock_rates[3 * k + 2] = rb - common;
            total += ra + rb - common;
        }
        if total <= 0.0 {
            break;
        }
        let t_next = t + rng.unit_exponential() / total;
        if t_next >= horizon {
            break;
        }
        let target = rng.next_f64() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (slot, &r) in clock_rates.iter().enumerate() {
            if r > 0.0 {
                acc += r;
                if acc >= target {
                    chosen = Some(slot);
                    break;
                }
            }
        }
        let slot = chosen.unwrap_or_else(|| {
            clock_rates
                .iter()
                .rposition(|&r| r > 0.0)
                .expect("total positive")
        });
        let k = slot / 3;
        let which = slot % 3;
        let zeta = &net.reactions[k].zeta;
        if which == 0 || which == 1 {
            for (i, &z) in zeta.iter().enumerate() {
                state_a[i] += z as f64;
            }
        }
        if which == 0 || which == 2 {
            for (i, &z) in zeta.iter().enumerate() {
                state_b[i] += z as f64;
            }
        }
        for (i, (&xa, &xb)) in state_a.iter().zip(&state_b).enumerate() {
            if xa < 0.0 || xb < 0.0 {
                return Err(SimError::NegativeCount {
                    t: t_next,
                    species: i,
                });
            }
        }
        t = t_next;
        outcome.n_events += 1;
        if outcome.decouple_time.is_none() && state_a != state_b {
            outcome.decouple_time = Some(t);
        }
        if outcome.n_events >= max_events {
            return Err(SimError::EventBudget {
                t,
                events: outcome.n_events,
            });
        }
    }
    outcome.final_a = state_a;
    outcome.final_b = state_b;
    Ok(outcome)
}
