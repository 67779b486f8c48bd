//! Acceptance suite: one test per numbered criterion, each at its stated
//! tolerance and sample size. Cargo's per-test status line doubles as the
//! pass/fail line per criterion; each test also prints a one-line summary.
//!
//! All campaigns run on fixed seeds, so a passing run is reproducible
//! bit-for-bit.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::time::Instant;

use hybridsens_core::expr::{EvalContext, EvalStack};
use hybridsens_core::model::{load_model, ModelDocument, RateLaw, ReactionNetwork};
use hybridsens_core::oracle::{birth_death_reference, cme_mean, cme_solve, TruncatedStateSpace};
use hybridsens_core::rng::RngStream;
use hybridsens_core::scaling::{
    bind_scaling, derive_reduced_model, limit_propensity_value, scaled_propensity,
    PdmpRateEvaluator, Rat, ReducedPdmp, ScalingDocument, ScalingSpec,
};
use hybridsens_core::sensitivity::{
    absolute_step, cfd_ctmc, coupled_pdmp_pair, sens_discrete_ipa, sens_pdmp_total,
    tilted_sensitivity_fd, CoupledPdmpRun, ScaledView, SensOptions,
};
use hybridsens_core::simulate::{
    ctmc_campaign, pdmp_campaign, pdmp_path, pdmp_simulate, AugmentSpec, CtmcMethod, PdmpRun,
    StepConfig,
};
use hybridsens_core::stats::{integer_histogram, summarize_samples, total_variation, uniform_grid};

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn model_path(name: &str) -> String {
    models_dir().join(name).display().to_string()
}

fn net(model: &str) -> ReactionNetwork {
    let doc = ModelDocument::from_path(&models_dir().join(model)).expect(model);
    load_model(&doc).expect(model)
}

fn scaling_spec(net: &ReactionNetwork, scaling: &str) -> ScalingSpec {
    let sdoc = ScalingDocument::from_path(&models_dir().join(scaling)).expect(scaling);
    bind_scaling(&sdoc, net).expect(scaling)
}

fn reduced(model: &str, scaling: &str) -> ReducedPdmp {
    let network = net(model);
    let spec = scaling_spec(&network, scaling);
    derive_reduced_model(&network, &spec).expect(model).0
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridsens"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// |a - b| within `zmax` combined standard errors; exact equality when both
/// errors vanish.
fn assert_z(label: &str, a: (f64, f64), b: (f64, f64), zmax: f64) {
    let sigma = (a.1 * a.1 + b.1 * b.1).sqrt();
    if sigma == 0.0 {
        assert_eq!(a.0, b.0, "{label}: deterministic values must match");
        return;
    }
    let z = (a.0 - b.0).abs() / sigma;
    assert!(
        z <= zmax,
        "{label}: {} vs {} (z = {z:.2}, sigma = {sigma:.3e})",
        a.0,
        b.0
    );
}

fn assert_budget(start: Instant, seconds: f64, label: &str) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < seconds,
        "{label} took {elapsed:.1}s, budget {seconds}s"
    );
    println!("[{label}] PASS in {elapsed:.1}s");
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_birth_death_oracle() {
    let start = Instant::now();
    let network = net("birth_death.json");
    let (mean_ref, sens_ref) = birth_death_reference(10.0, 1.0, 1.0);

    // SSA mean of X(1) over 1e5 paths
    let res = ctmc_campaign(
        &network,
        None,
        &[10.0],
        &[0.0, 1.0],
        100_000,
        101,
        10_000_000,
        CtmcMethod::Direct,
    )
    .unwrap();
    let s = res.stats.last().unwrap()[0];
    assert_z("ssa mean", (s.mean, s.stderr), (mean_ref, 0.0), 3.0);

    // coupled finite differences on the exact chain
    let opts = SensOptions {
        paths: 10_000,
        h: 1e-2,
        seed: 102,
        ..SensOptions::default()
    };
    let view = ScaledView::identity(1);
    let est = cfd_ctmc(&network, &view, "count", "theta", 1.0, &opts, 10_000_000).unwrap();
    assert_z("cfd sensitivity", (est.value, est.stderr), (sens_ref, 0.0), 3.0);

    // truncated master equation
    let space = TruncatedStateSpace::new(vec![200], 100_000).unwrap();
    let sol = cme_solve(&network, &[10.0], &space, &[0], 1.0, 1e-4).unwrap();
    let mean = cme_mean(&network, &space, &sol, "count", &[10.0]).unwrap();
    assert!(
        (mean - mean_ref).abs() < 1e-6,
        "cme mean {mean} vs {mean_ref}"
    );

    assert_budget(start, 60.0, "criterion 01 birth-death oracle");
}

#[test]
fn criterion_02_gene_expression_dynamics() {
    let start = Instant::now();
    let paths = 10_000usize;
    let horizon = 50.0;
    let grid = uniform_grid(horizon, 5);

    // exact multiscale chain, reported in scaled units
    let full = net("gene_full.json");
    let spec = scaling_spec(&full, "gene_full.scaling.json");
    let ssa = ctmc_campaign(
        &full,
        Some((&spec, 1000.0, 0.0)),
        &full.param_values.clone(),
        &grid,
        paths,
        201,
        50_000_000,
        CtmcMethod::Scaled,
    )
    .unwrap();

    // reduced hybrid model
    let pdmp = reduced("gene_qsa.json", "gene_qsa.scaling.json");
    let mut cfg = StepConfig::new(1e-3, grid.clone());
    cfg.max_events = 50_000_000;
    let hyb = pdmp_campaign(&pdmp, &pdmp.param_values.clone(), horizon, &cfg, paths, 202).unwrap();

    // species alignment: full (x1=mRNA, x2=protein) vs reduced (z1, z2)
    for (g, &t) in grid.iter().enumerate().skip(1) {
        for (full_i, red_i, what) in [(0usize, 0usize, "mRNA"), (1, 1, "protein")] {
            let a = ssa.stats[g][full_i];
            let b = hyb.stats[g][red_i];
            assert_z(
                &format!("{what} mean at t={t}"),
                (a.mean, a.stderr),
                (b.mean, b.stderr),
                3.0,
            );
        }
    }

    // marginal mRNA distributions at T = 50
    let hist_ssa = integer_histogram(ssa.final_states.iter().map(|s| s[0]));
    let hist_pdmp = integer_histogram(hyb.final_states.iter().map(|s| s[0]));
    let tv = total_variation(&hist_ssa, &hist_pdmp);
    assert!(tv < 0.05, "mRNA total variation {tv}");
    println!("gene dynamics: TV(mRNA) = {tv:.4}");

    assert_budget(start, 600.0, "criterion 02 gene dynamics");
}

#[test]
fn criterion_03_gene_sensitivities_cross_method() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let reduced_path = dir.path().join("gene_pdmp.json");
    let out = bin(&[
        "reduce",
        "--model",
        &model_path("gene_qsa.json"),
        "--scaling",
        &model_path("gene_qsa.scaling.json"),
        "--out",
        reduced_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let pdmp_csv = dir.path().join("sens_pdmp.csv");
    let out = bin(&[
        "sens",
        "--model",
        reduced_path.to_str().unwrap(),
        "--method",
        "pdmp-decomposition",
        "--observable",
        "protein",
        "--theta",
        "theta1",
        "--theta",
        "theta2",
        "--theta",
        "theta3",
        "--theta",
        "theta4",
        "--T",
        "50",
        "--paths",
        "1000",
        "--aux-times",
        "10",
        "--seed",
        "301",
        "--out",
        pdmp_csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let ctmc_csv = dir.path().join("sens_ctmc.csv");
    let out = bin(&[
        "sens",
        "--model",
        &model_path("gene_full.json"),
        "--scaling",
        &model_path("gene_full.scaling.json"),
        "--method",
        "cfd-ctmc",
        "--observable",
        "protein",
        "--theta",
        "theta1",
        "--theta",
        "theta2",
        "--theta",
        "theta3",
        "--theta",
        "theta4",
        "--T",
        "50",
        "--paths",
        "1000",
        "--h",
        "1e-2",
        "--seed",
        "302",
        "--out",
        ctmc_csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin(&[
        "compare",
        pdmp_csv.to_str().unwrap(),
        ctmc_csv.to_str().unwrap(),
    ]);
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "compare failed:\n{report}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    println!("gene sensitivities compare:\n{report}");

    assert_budget(start, 1800.0, "criterion 03 gene sensitivities");
}

#[test]
fn criterion_04_michaelis_menten() {
    let start = Instant::now();
    let horizon = 1.0;

    // reduced ODE trajectory (deterministic); the step is fine enough that
    // the Euler bias sits well below the SSA campaign's standard error
    let pdmp = reduced("mm_qsa.json", "mm_qsa.scaling.json");
    let cfg = StepConfig::new(1e-5, vec![]);
    let mut rng = RngStream::new(401, 0);
    let ode = pdmp_simulate(&pdmp, &pdmp.param_values, horizon, &cfg, &mut rng).unwrap();
    let product_ode = ode.final_state[1];

    // exact chain on the full network, scaled view
    let full = net("mm_full.json");
    let spec = scaling_spec(&full, "mm_full.scaling.json");
    let ssa = ctmc_campaign(
        &full,
        Some((&spec, 1000.0, 0.0)),
        &full.param_values.clone(),
        &[0.0, horizon],
        10_000,
        414,
        100_000_000,
        CtmcMethod::Scaled,
    )
    .unwrap();
    let s = ssa.stats.last().unwrap()[1]; // x2 = product concentration
    assert_z(
        "product concentration",
        (s.mean, s.stderr),
        (product_ode, 0.0),
        3.0,
    );

    // reduced-model sensitivities are deterministic and match the exact
    // chain's coupled finite differences
    let view = ScaledView::from_spec(&full, &spec).unwrap();
    for theta in ["theta1", "theta2", "theta3"] {
        let est = sens_pdmp_total(
            &pdmp,
            "product",
            theta,
            horizon,
            &cfg,
            &SensOptions {
                paths: 2,
                seed: 403,
                ..SensOptions::default()
            },
        )
        .unwrap();
        assert_eq!(est.stderr, 0.0, "{theta}: reduced model is deterministic");

        let opts = SensOptions {
            paths: 1000,
            h: 1e-2,
            seed: 404,
            ..SensOptions::default()
        };
        let ctmc = cfd_ctmc(&full, &view, "product", theta, horizon, &opts, 100_000_000).unwrap();
        assert_z(
            &format!("sensitivity {theta}"),
            (est.value, est.stderr),
            (ctmc.value, ctmc.stderr),
            3.0,
        );

        // central finite differences of the same Euler integrator
        let h = 1e-5;
        let theta0 = pdmp.param_values[pdmp.param_index(theta).unwrap()];
        let run = |tv: f64| {
            let params = pdmp.params_with(theta, tv).unwrap();
            let mut rng = RngStream::new(405, 0);
            pdmp_simulate(&pdmp, &params, horizon, &cfg, &mut rng)
                .unwrap()
                .final_state[1]
        };
        let fd = (run(theta0 + h) - run(theta0 - h)) / (2.0 * h);
        let rel = (est.value - fd).abs() / fd.abs().max(1e-12);
        assert!(rel <= 1e-4, "{theta}: ode sensitivity {} vs fd {fd} (rel {rel:.2e})", est.value);
    }

    assert_budget(start, 600.0, "criterion 04 michaelis-menten");
}

#[test]
fn criterion_05_sensitivity_convergence_in_n() {
    let start = Instant::now();
    // closed two-species toy: 2A -> 2B at rate (theta/N) xA(xA-1)/2, B -> A
    // at unit rate; A + B = N is conserved, so the scaled dynamics live in
    // a compact set. Limit ODE: za' = -theta za^2 + zb, zb' = theta za^2 - zb.
    let base = net("toy_conserved.json");
    let spec = scaling_spec(&base, "toy_conserved.scaling.json");
    let (pdmp, _) = derive_reduced_model(&base, &spec).unwrap();
    let cfg = StepConfig::new(1e-4, vec![]);
    let horizon = 1.0;
    let target = sens_pdmp_total(
        &pdmp,
        "a_conc",
        "theta",
        horizon,
        &cfg,
        &SensOptions {
            paths: 2,
            seed: 501,
            ..SensOptions::default()
        },
    )
    .unwrap();
    assert_eq!(target.stderr, 0.0);

    let mut gaps: Vec<(f64, f64)> = Vec::new(); // (|S_N - S_hat|, stderr)
    for (i, n) in [10.0f64, 100.0, 1000.0].into_iter().enumerate() {
        let a0 = (0.7 * n).round() as i64;
        let b0 = (0.3 * n).round() as i64;
        let doc = ModelDocument::from_json(&format!(
            r#"{{
              "species": [
                {{"name": "a", "initial": {a0}}},
                {{"name": "b", "initial": {b0}}}
              ],
              "reactions": [
                {{"name": "pairup", "reactants": {{"a": 2}}, "products": {{"b": 2}},
                  "rate": {{"type": "mass_action", "kappa": "theta/N0"}}}},
                {{"name": "revert", "reactants": {{"b": 1}}, "products": {{"a": 1}},
                  "rate": {{"type": "mass_action", "kappa": "1"}}}}
              ],
              "parameters": {{"N0": {n}, "theta": 2.0}},
              "observables": {{"a_conc": "a", "b_conc": "b"}}
            }}"#
        ))
        .unwrap();
        let network = load_model(&doc).unwrap();
        let sdoc = ScalingDocument::from_json(&format!(
            r#"{{"alpha": {{"a": "1", "b": "1"}},
                 "beta": {{"pairup": "-1", "revert": "0"}},
                 "N0": {n}, "gamma": "auto"}}"#
        ))
        .unwrap();
        let nspec = bind_scaling(&sdoc, &network).unwrap();
        let view = ScaledView::from_spec(&network, &nspec).unwrap();
        let opts = SensOptions {
            paths: 1000,
            h: 1e-2,
            seed: 502 + i as u64,
            ..SensOptions::default()
        };
        let est = cfd_ctmc(&network, &view, "a_conc", "theta", horizon, &opts, 10_000_000).unwrap();
        let gap = (est.value - target.value).abs();
        println!("N = {n}: S_N = {} +- {}, gap = {gap}", est.value, est.stderr);
        gaps.push((gap, est.stderr));
    }
    for w in gaps.windows(2) {
        let (g1, s1) = w[0];
        let (g2, s2) = w[1];
        let sigma = (s1 * s1 + s2 * s2).sqrt();
        assert!(
            g2 <= g1 + 3.0 * sigma,
            "gap grew: {g1} -> {g2} (3 sigma = {})",
            3.0 * sigma
        );
    }

    assert_budget(start, 600.0, "criterion 05 convergence in N");
}

#[test]
fn criterion_06_scaled_propensity_convergence_rate() {
    let start = Instant::now();
    let cases = [
        ("dimer_decay.json", "dimer_decay.scaling.json"),
        ("toy_conserved.json", "toy_conserved.scaling.json"),
        ("bd_scaled.json", "bd_scaled.scaling.json"),
        ("mm_full.json", "mm_full.scaling.json"),
        ("gene_qsa.json", "gene_qsa.scaling.json"),
    ];
    let mut rng = RngStream::new(601, 0);
    let mut checked_halving = 0u32;
    for (model, scaling) in cases {
        let network = net(model);
        let spec = scaling_spec(&network, scaling);
        for k in 0..network.n_reactions() {
            if !matches!(network.reactions[k].rate, RateLaw::MassAction { .. }) {
                continue;
            }
            let has_multi = network.reactions[k]
                .reactants
                .iter()
                .any(|&(i, nu)| nu >= 2 && spec.alpha[i] > Rat::from_integer(0));
            for _ in 0..50 {
                let state: Vec<f64> = (0..network.n_species())
                    .map(|_| 0.2 + 3.0 * rng.next_f64())
                    .collect();
                let lim =
                    limit_propensity_value(&network, &spec, k, &state, &network.param_values)
                        .unwrap();
                if has_multi {
                    for n in [100.0, 1000.0, 10_000.0] {
                        let gap = |nn: f64| {
                            (scaled_propensity(&network, &spec, k, &state, nn, &network.param_values)
                                .unwrap()
                                - lim)
                                .abs()
                        };
                        let ratio = gap(2.0 * n) / gap(n);
                        assert!(
                            (0.4..=0.6).contains(&ratio),
                            "{model} reaction {k} at n={n}: ratio {ratio}"
                        );
                        checked_halving += 1;
                    }
                } else {
                    let v = scaled_propensity(&network, &spec, k, &state, 1000.0, &network.param_values)
                        .unwrap();
                    assert!((v - lim).abs() <= 1e-9 * (1.0 + lim.abs()), "{model} reaction {k}");
                }
            }
        }
    }
    assert!(checked_halving >= 300, "halving cases exercised: {checked_halving}");
    assert_budget(start, 60.0, "criterion 06 rate convergence");
}

#[test]
fn criterion_07_decomposition_and_tilted_equivalence() {
    let start = Instant::now();
    let pdmp = reduced("gene_qsa.json", "gene_qsa.scaling.json");
    let cfg = StepConfig::new(1e-3, vec![]);
    let horizon = 50.0;

    // exact decomposition on every campaign
    for (theta, paths, seed) in [("theta1", 200, 701u64), ("theta2", 200, 702), ("theta4", 200, 703)] {
        let est = sens_pdmp_total(
            &pdmp,
            "protein",
            theta,
            horizon,
            &cfg,
            &SensOptions {
                paths,
                seed,
                ..SensOptions::default()
            },
        )
        .unwrap();
        let (c, d) = est.parts.unwrap();
        assert_eq!(
            est.value.to_bits(),
            (c.value + d.value).to_bits(),
            "{theta}: total must be the exact sum of parts"
        );
    }

    // tilted-dynamics finite difference reproduces the discrete part;
    // theta2 exercises the state-gradient correction term through y
    let opts_ipa = SensOptions {
        paths: 1000,
        seed: 704,
        ..SensOptions::default()
    };
    let ipa = sens_discrete_ipa(&pdmp, "protein", "theta2", horizon, &cfg, &opts_ipa).unwrap();
    let opts_tilt = SensOptions {
        paths: 1000,
        h: 1e-2,
        seed: 705,
        ..SensOptions::default()
    };
    let tilt = tilted_sensitivity_fd(&pdmp, "protein", "theta2", horizon, &cfg, &opts_tilt).unwrap();
    println!(
        "discrete part: auxiliary estimator {} +- {}, tilted fd {} +- {}",
        ipa.value, ipa.stderr, tilt.value, tilt.stderr
    );
    assert_z(
        "tilted equivalence (theta2)",
        (ipa.value, ipa.stderr),
        (tilt.value, tilt.stderr),
        3.0,
    );

    assert_budget(start, 1200.0, "criterion 07 decomposition/tilted");
}

#[test]
fn criterion_08_coupling_health() {
    let start = Instant::now();
    let pdmp = reduced("gene_qsa.json", "gene_qsa.scaling.json");
    let cfg = StepConfig::new(2e-3, vec![]);
    let horizon = 50.0;
    let paths = 10_000usize;
    let theta0 = pdmp.param_values[pdmp.param_index("theta1").unwrap()];
    let h_abs = absolute_step(1e-2, theta0);
    let params_b = pdmp.params_with("theta1", theta0 + h_abs).unwrap();
    let initial = pdmp.initial_state();
    let f = pdmp.observable("protein").unwrap().clone();
    let mut stack = EvalStack::new();

    let mut fa = Vec::with_capacity(paths);
    let mut fb = Vec::with_capacity(paths);
    let mut residual_max: f64 = 0.0;
    for p in 0..paths {
        let mut rng = RngStream::derive(801, &[3, p as u64]);
        let out = coupled_pdmp_pair(
            &pdmp,
            CoupledPdmpRun {
                params_a: &pdmp.param_values,
                params_b: &params_b,
                initial_a: &initial,
                initial_b: &initial,
                horizon,
                cfg: &cfg,
            },
            &mut rng,
        )
        .unwrap();
        residual_max = residual_max.max(out.residual_product_max);
        fa.push(
            f.eval(
                EvalContext {
                    state: &out.final_a,
                    params: &pdmp.param_values,
                },
                &mut stack,
            )
            .unwrap(),
        );
        fb.push(
            f.eval(
                EvalContext {
                    state: &out.final_b,
                    params: &params_b,
                },
                &mut stack,
            )
            .unwrap(),
        );
    }
    assert_eq!(residual_max, 0.0, "residual-rate product must vanish identically");

    // independent marginals
    let run_plain = |params: &[f64], tag: u64| {
        let results: Vec<f64> = (0..paths)
            .map(|p| {
                let mut rng = RngStream::derive(801, &[tag, p as u64]);
                let out = pdmp_simulate(&pdmp, params, horizon, &cfg, &mut rng).unwrap();
                let mut stack = EvalStack::new();
                f.eval(
                    EvalContext {
                        state: &out.final_state,
                        params,
                    },
                    &mut stack,
                )
                .unwrap()
            })
            .collect();
        summarize_samples(&results)
    };
    let ind_a = run_plain(&pdmp.param_values, 4);
    let ind_b = run_plain(&params_b, 5);
    let ca = summarize_samples(&fa);
    let cb = summarize_samples(&fb);
    assert_z(
        "coupled vs independent marginal at theta",
        (ca.mean, ca.stderr),
        (ind_a.mean, ind_a.stderr),
        4.0,
    );
    assert_z(
        "coupled vs independent marginal at theta + h",
        (cb.mean, cb.stderr),
        (ind_b.mean, ind_b.stderr),
        4.0,
    );

    // degenerate coupling: identical parameters give bit-identical pairs
    for p in 0..20u64 {
        let mut rng = RngStream::derive(802, &[p]);
        let out = coupled_pdmp_pair(
            &pdmp,
            CoupledPdmpRun {
                params_a: &pdmp.param_values,
                params_b: &pdmp.param_values,
                initial_a: &initial,
                initial_b: &initial,
                horizon: 20.0,
                cfg: &cfg,
            },
            &mut rng,
        )
        .unwrap();
        for (a, b) in out.final_a.iter().zip(&out.final_b) {
            assert_eq!(a.to_bits(), b.to_bits(), "h = 0 pair must be identical");
        }
    }

    assert_budget(start, 600.0, "criterion 08 coupling health");
}

#[test]
fn criterion_09_y_phi_representation() {
    let start = Instant::now();
    let pdmp = reduced("gene_qsa.json", "gene_qsa.scaling.json");
    let theta_index = pdmp.param_index("theta2").unwrap();
    let horizon = 50.0;
    let dt = 2e-3;
    let n_steps = 25_000usize;
    let grid = uniform_grid(horizon, n_steps);
    let cfg = StepConfig::new(dt, grid.clone());
    let continuous_rx: Vec<usize> = pdmp.continuous_reactions().map(|(k, _)| k).collect();
    let slot = pdmp.continuous[0];

    for p in 0..100u64 {
        let mut rng = RngStream::new(901, p);
        let mut run = PdmpRun::new(&pdmp.param_values, horizon, &cfg);
        run.augment = Some(AugmentSpec {
            theta_index,
            with_phi: true,
        });
        let out = pdmp_path(&pdmp, run, &mut rng).unwrap();
        let y_direct = out.final_y[0];
        let phi = out.phi_grid.as_ref().unwrap();
        let phi_final = out.final_phi.as_ref().unwrap()[0];
        let mut evaluator = PdmpRateEvaluator::new(&pdmp, &pdmp.param_values).unwrap();
        let mut y_quad = 0.0;
        for i in 0..n_steps {
            let h = grid[i + 1] - grid[i];
            let mut drift = 0.0;
            for &k in &continuous_rx {
                let dtheta = evaluator
                    .rate_dtheta(k, &out.states[i], &pdmp.param_values, theta_index)
                    .unwrap();
                drift += dtheta * pdmp.reactions[k].zeta_hat[slot] as f64;
            }
            y_quad += h * drift * (phi_final / phi[i][0]);
        }
        let rel = (y_quad - y_direct).abs() / y_direct.abs().max(1e-12);
        assert!(
            rel <= 5.0 * dt,
            "path {p}: direct {y_direct} vs quadrature {y_quad} (rel {rel:.3e})"
        );
    }

    assert_budget(start, 600.0, "criterion 09 y-phi representation");
}

#[test]
fn criterion_10_pdmp_cost_below_half_of_ssa() {
    let start = Instant::now();
    let paths = 2000usize;
    let horizon = 50.0;
    let grid = uniform_grid(horizon, 50);

    let full = net("gene_full.json");
    let t_ssa = Instant::now();
    let ssa = ctmc_campaign(
        &full,
        None,
        &full.param_values.clone(),
        &grid,
        paths,
        1001,
        100_000_000,
        CtmcMethod::Direct,
    )
    .unwrap();
    let ssa_wall = t_ssa.elapsed().as_secs_f64();

    // dt = 1e-2 keeps the Euler bias below Monte Carlo noise at this path
    // count (the dt-refinement checks pin the bias scale); the accuracy
    // match itself is criterion 02's job at dt = 1e-3.
    let pdmp = reduced("gene_qsa.json", "gene_qsa.scaling.json");
    let cfg = StepConfig::new(1e-2, grid.clone());
    let t_pdmp = Instant::now();
    let hyb = pdmp_campaign(&pdmp, &pdmp.param_values.clone(), horizon, &cfg, paths, 1002).unwrap();
    let pdmp_wall = t_pdmp.elapsed().as_secs_f64();

    let ratio = pdmp_wall / ssa_wall;
    println!(
        "cost: ssa {ssa_wall:.3}s ({} events), pdmp {pdmp_wall:.3}s ({} firings), ratio {ratio:.3}",
        ssa.n_events_total, hyb.n_events_total
    );

    let bench_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance");
    std::fs::create_dir_all(&bench_dir).unwrap();
    let manifest = serde_json::json!({
        "benchmark": "gene-model campaign cost, equal path counts",
        "paths": paths,
        "T": horizon,
        "pdmp_dt": 1e-2,
        "ssa_wall_s": ssa_wall,
        "pdmp_wall_s": pdmp_wall,
        "pdmp_over_ssa_ratio": ratio,
        "threads": rayon::current_num_threads(),
    });
    std::fs::write(
        bench_dir.join("bench_manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();

    assert!(ratio <= 0.5, "pdmp/ssa wall ratio {ratio} exceeds 0.5");
    assert_budget(start, 600.0, "criterion 10 cost ratio");
}

#[test]
fn criterion_11_byte_identical_outputs() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).display().to_string();

    // validate: stdout only
    let validate_once = || {
        let out = bin(&["validate", "--model", &model_path("gene_qsa.json")]);
        assert!(out.status.success());
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    assert_eq!(validate_once(), validate_once(), "validate stdout");

    // reduce: output JSON and report bytes
    for tag in ["a", "b"] {
        let out = bin(&[
            "reduce",
            "--model",
            &model_path("gene_qsa.json"),
            "--scaling",
            &model_path("gene_qsa.scaling.json"),
            "--out",
            &d(&format!("red_{tag}.json")),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(dir.path().join("red_a.json")).unwrap(),
        std::fs::read(dir.path().join("red_b.json")).unwrap(),
        "reduce output"
    );
    assert_eq!(
        std::fs::read(dir.path().join("red_a.report.json")).unwrap(),
        std::fs::read(dir.path().join("red_b.report.json")).unwrap(),
        "reduce report"
    );

    // simulate: summary, raw and histogram bytes
    for tag in ["a", "b"] {
        let out = bin(&[
            "simulate",
            "--model",
            &d("red_a.json"),
            "--T",
            "10",
            "--dt",
            "1e-3",
            "--paths",
            "50",
            "--grid",
            "20",
            "--seed",
            "7",
            "--out",
            &d(&format!("sim_{tag}.csv")),
            "--raw",
            &d(&format!("simraw_{tag}.csv")),
            "--histogram",
            "z1",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for prefix in ["sim", "simraw"] {
        assert_eq!(
            std::fs::read(dir.path().join(format!("{prefix}_a.csv"))).unwrap(),
            std::fs::read(dir.path().join(format!("{prefix}_b.csv"))).unwrap(),
            "{prefix} csv"
        );
    }
    assert_eq!(
        std::fs::read(dir.path().join("sim_a.hist.csv")).unwrap(),
        std::fs::read(dir.path().join("sim_b.hist.csv")).unwrap(),
        "histogram csv"
    );

    // sens: byte-identical modulo the wall_time_s measurement column
    for tag in ["a", "b"] {
        let out = bin(&[
            "sens",
            "--model",
            &d("red_a.json"),
            "--method",
            "cfd-pdmp",
            "--observable",
            "protein",
            "--theta",
            "theta1",
            "--T",
            "10",
            "--dt",
            "1e-3",
            "--paths",
            "40",
            "--seed",
            "8",
            "--out",
            &d(&format!("sens_{tag}.csv")),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let strip_wall = |text: &str| -> String {
        text.lines()
            .map(|l| {
                if l.starts_with('#') || l.starts_with("parameter") {
                    l.to_owned()
                } else {
                    l.rsplit_once(',').map(|(head, _)| head.to_owned()).unwrap_or_else(|| l.to_owned())
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let sa = std::fs::read_to_string(dir.path().join("sens_a.csv")).unwrap();
    let sb = std::fs::read_to_string(dir.path().join("sens_b.csv")).unwrap();
    assert_eq!(strip_wall(&sa), strip_wall(&sb), "sens csv (wall-time column excluded)");

    // compare: stdout and report file
    for tag in ["a", "b"] {
        let out = bin(&[
            "compare",
            &d("sens_a.csv"),
            &d("sens_a.csv"),
            "--out",
            &d(&format!("cmp_{tag}.csv")),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(dir.path().join("cmp_a.csv")).unwrap(),
        std::fs::read(dir.path().join("cmp_b.csv")).unwrap(),
        "compare report"
    );

    // oracle-cme: distribution bytes
    for tag in ["a", "b"] {
        let out = bin(&[
            "oracle-cme",
            "--model",
            &model_path("birth_death.json"),
            "--bound",
            "s=80",
            "--T",
            "1",
            "--out",
            &d(&format!("dist_{tag}.csv")),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(dir.path().join("dist_a.csv")).unwrap(),
        std::fs::read(dir.path().join("dist_b.csv")).unwrap(),
        "oracle-cme distribution"
    );

    assert_budget(start, 300.0, "criterion 11 determinism");
}
