//! Expression-layer properties: derivative correctness against central
//! finite differences (order-2 convergence), printer round-trips, and
//! deterministic evaluation.

use hybridsens_core::expr::{EvalContext, EvalStack, Expression, SymbolRef};
use hybridsens_core::rng::RngStream;
use proptest::prelude::*;

const SPECIES: &[&str] = &["z1", "z2", "x1"];
const PARAMS: &[&str] = &["theta1", "theta2", "theta3", "theta4", "N0", "M"];

/// Formulas shipped with the example models (plus a few stress cases).
const SHIPPED: &[&str] = &[
    "theta2*z1",
    "20*0.5/(1+theta1*z2)",
    "20*N0*x1/(N0+theta1*z2)",
    "M*theta1*theta3*x1/(theta2+theta3+theta1*x1)",
    "M*theta1*theta3*x1/(N0*(theta2+theta3)+theta1*x1)",
    "theta3*z1 + theta4*z2^2",
    "exp(-theta4*z2)*log(1+z1)",
];

fn random_context(rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let state: Vec<f64> = (0..SPECIES.len()).map(|_| 0.1 + 5.0 * rng.next_f64()).collect();
    let mut params: Vec<f64> = (0..PARAMS.len()).map(|_| 0.1 + 2.0 * rng.next_f64()).collect();
    params[4] = 100.0 + 900.0 * rng.next_f64(); // N0 stays large
    (state, params)
}

#[test]
fn derivative_matches_central_differences_at_second_order() {
    let mut rng = RngStream::new(0x00D1FF, 0);
    let mut stack = EvalStack::new();
    for text in SHIPPED {
        let e = Expression::parse(text, SPECIES, PARAMS).expect(text);
        for _ in 0..100 {
            let (state, params) = random_context(&mut rng);
            let symbols = SPECIES
                .iter()
                .enumerate()
                .map(|(i, _)| SymbolRef::Species(i))
                .chain(PARAMS.iter().enumerate().map(|(j, _)| SymbolRef::Param(j)));
            for wrt in symbols {
                let ctx = EvalContext {
                    state: &state,
                    params: &params,
                };
                let exact = e.derivative(ctx, wrt, &mut stack).expect("derivative");
                let mut fd = |h: f64| -> f64 {
                    let mut hi_state = state.clone();
                    let mut lo_state = state.clone();
                    let mut hi_params = params.clone();
                    let mut lo_params = params.clone();
                    match wrt {
                        SymbolRef::Species(i) => {
                            hi_state[i] += h;
                            lo_state[i] -= h;
                        }
                        SymbolRef::Param(j) => {
                            hi_params[j] += h;
                            lo_params[j] -= h;
                        }
                    }
                    let hi = e
                        .eval(
                            EvalContext {
                                state: &hi_state,
                                params: &hi_params,
                            },
                            &mut stack,
                        )
                        .unwrap();
                    let lo = e
                        .eval(
                            EvalContext {
                                state: &lo_state,
                                params: &lo_params,
                            },
                            &mut stack,
                        )
                        .unwrap();
                    (hi - lo) / (2.0 * h)
                };
                let err3 = (fd(1e-3) - exact).abs();
                let err4 = (fd(1e-4) - exact).abs();
                // fit C from the coarse step; the fine step must follow the
                // h^2 law up to slack plus a roundoff floor
                let c = err3 / 1e-6;
                let bound = 4.0 * c * 1e-8 + 1e-9 * (1.0 + exact.abs());
                assert!(
                    err4 <= bound,
                    "{text} d/d{wrt:?}: err(1e-3)={err3:.3e} err(1e-4)={err4:.3e} bound={bound:.3e}"
                );
            }
        }
    }
}

#[test]
fn shipped_formulas_roundtrip_through_printer() {
    let mut stack = EvalStack::new();
    let mut rng = RngStream::new(0xB00, 7);
    for text in SHIPPED {
        let e = Expression::parse(text, SPECIES, PARAMS).expect(text);
        let printed = e.canonical(SPECIES, PARAMS);
        let e2 = Expression::parse(&printed, SPECIES, PARAMS).expect(&printed);
        assert!(e.structurally_eq(&e2), "{text} -> {printed}");
        // printed form evaluates identically
        let (state, params) = random_context(&mut rng);
        let ctx = EvalContext {
            state: &state,
            params: &params,
        };
        let a = e.eval(ctx, &mut stack).unwrap();
        let b = e2.eval(ctx, &mut stack).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

// Random expression trees for the parser round-trip property.
fn arb_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0u32..40).prop_map(|n| format!("{}", n as f64 / 4.0)),
        prop_oneof![Just("z1"), Just("z2"), Just("x1")].prop_map(str::to_owned),
        prop_oneof![Just("theta1"), Just("theta2"), Just("N0")].prop_map(str::to_owned),
    ];
    leaf.prop_recursive(5, 64, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})+({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})-({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})/({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("min({a}, {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("max({a}, {b})")),
            inner.clone().prop_map(|a| format!("-({a})")),
            inner.clone().prop_map(|a| format!("exp({a})")),
            inner.clone().prop_map(|a| format!("log({a})")),
            (inner, 0i32..4).prop_map(|(a, n)| format!("({a})^{n}")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parser_roundtrip_on_random_trees(text in arb_expr()) {
        let e = Expression::parse(&text, SPECIES, PARAMS).expect("generated text parses");
        let printed = e.canonical(SPECIES, PARAMS);
        let e2 = Expression::parse(&printed, SPECIES, PARAMS).expect("printed text parses");
        prop_assert!(e.structurally_eq(&e2), "{} -> {}", text, printed);
    }
}
