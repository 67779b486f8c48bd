//! Diagnostic: measure the reduced-model gap for the enzyme-kinetics
//! example as a function of the population scale, and cross-check the exact
//! simulator against the truncated master equation on a shrunken variant.

use hybridsens_core::model::{load_model, ModelDocument};
use hybridsens_core::oracle::{cme_mean, cme_solve, TruncatedStateSpace};
use hybridsens_core::scaling::{bind_scaling, derive_reduced_model, ScalingDocument};
use hybridsens_core::sensitivity::ScaledView;
use hybridsens_core::simulate::{ctmc_campaign, pdmp_simulate, CtmcMethod, StepConfig};

fn mm_doc(n0: f64, m: i64) -> ModelDocument {
    ModelDocument::from_json(&format!(
        r#"{{
          "species": [
            {{"name": "x1", "initial": {s0}}},
            {{"name": "x2", "initial": 0}},
            {{"name": "x3", "initial": {m}}},
            {{"name": "x4", "initial": 0}}
          ],
          "reactions": [
            {{"name": "bind", "reactants": {{"x1": 1, "x3": 1}}, "products": {{"x4": 1}},
              "rate": {{"type": "mass_action", "kappa": "theta1"}}}},
            {{"name": "unbind", "reactants": {{"x4": 1}}, "products": {{"x1": 1, "x3": 1}},
              "rate": {{"type": "mass_action", "kappa": "N0*theta2"}}}},
            {{"name": "convert", "reactants": {{"x4": 1}}, "products": {{"x2": 1, "x3": 1}},
              "rate": {{"type": "mass_action", "kappa": "N0*theta3"}}}}
          ],
          "parameters": {{"N0": {n0}, "theta1": 0.3, "theta2": 1.0, "theta3": 0.8}},
          "observables": {{"product": "x2", "substrate": "x1"}}
        }}"#,
        s0 = (0.5 * n0) as i64,
    ))
    .unwrap()
}

fn mm_qsa_doc(n0: f64, m: i64) -> ModelDocument {
    ModelDocument::from_json(&format!(
        r#"{{
          "species": [
            {{"name": "x1", "initial": {s0}}},
            {{"name": "x2", "initial": 0}}
          ],
          "reactions": [
            {{"name": "convert_mm", "reactants": {{"x1": 1}}, "products": {{"x2": 1}},
              "rate": {{"type": "expr", "formula": "M*theta1*theta3*x1/(N0*(theta2+theta3)+theta1*x1)"}}}}
          ],
          "parameters": {{"N0": {n0}, "M": {m}, "theta1": 0.3, "theta2": 1.0, "theta3": 0.8}},
          "observables": {{"product": "x2", "substrate": "x1"}}
        }}"#,
        s0 = (0.5 * n0) as i64,
    ))
    .unwrap()
}

fn main() {
    // 1. exact-simulator audit against the master equation on a small variant
    let n0 = 24.0;
    let m = 3i64;
    let doc = mm_doc(n0, m);
    let net = load_model(&doc).unwrap();
    let space = TruncatedStateSpace::new(vec![14, 14, m, m], 200_000).unwrap();
    let sol = cme_solve(&net, &net.param_values, &space, &[12, 0, 3, 0], 1.0, 1e-4).unwrap();
    let cme = cme_mean(&net, &space, &sol, "product", &net.param_values).unwrap();
    let grid = [0.0, 1.0];
    let res = ctmc_campaign(
        &net,
        None,
        &net.param_values.clone(),
        &grid,
        400_000,
        7,
        10_000_000,
        CtmcMethod::Direct,
    )
    .unwrap();
    let s = res.stats.last().unwrap()[1];
    println!(
        "audit n0=24: cme mean {cme:.6}, ssa mean {:.6} +- {:.6} (z = {:.2})",
        s.mean,
        s.stderr,
        (s.mean - cme).abs() / s.stderr
    );

    // 2. reduction gap as a function of the scale
    for (n0, paths) in [(250.0, 40_000usize), (1000.0, 40_000), (4000.0, 40_000)] {
        let doc = mm_doc(n0, 20);
        let net = load_model(&doc).unwrap();
        let sdoc = ScalingDocument::from_json(&format!(
            r#"{{"alpha": {{"x1": "1", "x2": "1", "x3": "0", "x4": "0"}},
                 "beta": {{"bind": "0", "unbind": "1", "convert": "1"}},
                 "N0": {n0}, "gamma": "0"}}"#
        ))
        .unwrap();
        let spec = bind_scaling(&sdoc, &net).unwrap();
        let _ = ScaledView::from_spec(&net, &spec).unwrap();
        let res = ctmc_campaign(
            &net,
            Some((&spec, n0, 0.0)),
            &net.param_values.clone(),
            &grid,
            paths,
            11,
            100_000_000,
            CtmcMethod::Scaled,
        )
        .unwrap();
        let s = res.stats.last().unwrap()[1];

        let qsa = mm_qsa_doc(n0, 20);
        let qnet = load_model(&qsa).unwrap();
        let qsdoc = ScalingDocument::from_json(&format!(
            r#"{{"alpha": {{"x1": "1", "x2": "1"}}, "beta": {{"convert_mm": "0"}},
                 "N0": {n0}, "gamma": "auto",
                 "reduced_formulas": {{"convert_mm": "M*theta1*theta3*x1/(theta2+theta3+theta1*x1)"}}}}"#
        ))
        .unwrap();
        let qspec = bind_scaling(&qsdoc, &qnet).unwrap();
        let (pdmp, _) = derive_reduced_model(&qnet, &qspec).unwrap();
        let cfg = StepConfig::new(1e-5, vec![]);
        let mut rng = hybridsens_core::rng::RngStream::new(1, 0);
        let ode = pdmp_simulate(&pdmp, &pdmp.param_values, 1.0, &cfg, &mut rng).unwrap();
        let gap = ode.final_state[1] - s.mean;
        println!(
            "n0={n0}: ssa {:.7} +- {:.7}, ode {:.7}, gap {:.3e} ({:.2} sigma at 1e4 paths)",
            s.mean,
            s.stderr,
            ode.final_state[1],
            gap,
            gap.abs() / (s.stderr * (paths as f64 / 10_000.0).sqrt())
        );
    }
}
