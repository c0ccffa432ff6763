use std::sync::Arc;

use excursion_core::diffusion::{make_abm, make_gbm, FundamentalPair, StateSpace};
use excursion_core::quadrature::QuadratureSpec;
use excursion_core::reward::{Policy, RewardSpec};
use excursion_core::vss::*;
use excursion_core::Error;
use proptest::prelude::*;

const X_STAR: f64 = 3.576039939453753;
const PUT_VALUE_AT_5: f64 = 0.6136613504936813;
// Reflection/smooth-fit ODE oracle for the lookback reward s - x/2.
const LOOKBACK_BETA: f64 = 0.7016361800273869;
const LOOKBACK_V11: f64 = 0.7172950097278942;
// Classical closed form for the reward s.
const SHEPP_BETA: f64 = 0.7840728684674864;
const SHEPP_COEF: f64 = 1.1385511789901488;

fn put_model() -> FundamentalPair {
    make_gbm(0.05, 0.25, 0.15).unwrap().1
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn corollary1_put_golden_numbers() {
    let fp = put_model();
    let sol = solve_corollary1(&fp, &RewardSpec::put(5.0), 5.0, 5.0 - 1e-9).unwrap();
    assert!((sol.l_star - 1.42396).abs() < 1e-5);
    assert!((sol.stop_point() - X_STAR).abs() < 1e-8);
    assert!(rel(sol.value, PUT_VALUE_AT_5) < 1e-12);
    assert!(sol.gamma_slope.abs() < 1e-9);
    assert!(!sol.boundary_binding);
}

#[test]
fn corollary1_zero_width() {
    let fp = put_model();
    let sol = solve_corollary1(&fp, &RewardSpec::put(5.0), 5.0, 0.0).unwrap();
    assert_eq!(sol.l_star, 0.0);
    assert_eq!(sol.value, 0.0);
    assert!(sol.boundary_binding);
}

#[test]
fn corollary1_matches_dense_grid() {
    let fp = put_model();
    let r = RewardSpec::put(5.0);
    for &(s, b) in &[(3.0, 2.9), (5.0, 1.0), (6.0, 5.9), (4.0, 0.3)] {
        let sol = solve_corollary1(&fp, &r, s, b).unwrap();
        let n = (b / 1e-6) as usize;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=n {
            let z = b * i as f64 / n as f64;
            best = best.max(fp.phi_ratio(s, s - z) * r.h(s - z, s));
        }
        assert!((sol.value - best).abs() < 1e-8, "s={s}: {} vs {best}", sol.value);
    }
}

#[test]
fn corollary1_rejects_s_dependent() {
    let fp = put_model();
    assert!(matches!(
        solve_corollary1(&fp, &RewardSpec::lookback(0.5), 5.0, 5.0),
        Err(Error::RequiresSIndependent)
    ));
}

#[test]
fn prop2_lookback_threshold_is_proportional() {
    let fp = put_model();
    let r = RewardSpec::lookback(0.5);
    for &s in &[1.0, 2.0, 5.0, 10.0] {
        let sol = solve_prop2(&fp, &r, s, s * (1.0 - 1e-9)).unwrap();
        let beta = sol.stop_point() / s;
        assert!((beta - LOOKBACK_BETA).abs() < 1e-8, "s={s} beta={beta}");
        assert!(rel(sol.value, LOOKBACK_V11 * s) < 1e-9);
        assert!(sol.gamma_slope > 0.0);
    }
}

#[test]
fn prop2_shepp_closed_form() {
    let fp = put_model();
    let (g0, g1) = fp.power_exponents().unwrap();
    let r = RewardSpec::running_max();
    for &s in &[0.5, 1.0, 3.0, 10.0] {
        let sol = solve_prop2(&fp, &r, s, s * (1.0 - 1e-9)).unwrap();
        let beta = sol.stop_point() / s;
        assert!((beta - SHEPP_BETA).abs() < 1e-8);
        let closed = s / (g1 - g0) * (g1 * beta.powf(-g0) - g0 * beta.powf(-g1));
        assert!(rel(sol.value, closed) < 1e-8);
        assert!(rel(sol.value, SHEPP_COEF * s) < 1e-9);
        let xi = solve_x_independent(&fp, &r, s, sol.l_star).unwrap();
        assert!(rel(xi, closed) < 1e-10);
        assert!(rel(xi, sol.value) < 1e-8);
    }
}

#[test]
fn prop2_trivial_threshold() {
    let fp = put_model();
    assert_eq!(q_factor(&fp, 3.0, 0.0), Some(1.0));
    let r = RewardSpec::lookback(0.5);
    let sol = solve_prop2(&fp, &r, 3.0, 0.0).unwrap();
    assert_eq!(sol.value, r.h(3.0, 3.0));
}

#[test]
fn prop2_assumption_failures() {
    let fp = put_model();
    let bad = RewardSpec::terminal("neg", Arc::new(|x, s| -s * x), true, true);
    assert!(matches!(solve_prop2(&fp, &bad, 2.0, 1.0), Err(Error::AssumptionViolated(_))));
    let (_, abm) = make_abm(0.0, 1.0, 0.5).unwrap();
    let rep = check_prop2_assumptions(&abm, &RewardSpec::running_max(), &[0.0, 1.0], &[0.1, 1.0]);
    assert!(!rep.phi_ratio_ok);
}

#[test]
fn assumption_report_examples() {
    let fp = put_model();
    let grid: Vec<f64> = (1..=20).map(|i| i as f64 * 0.5).collect();
    let eps = [1e-3, 0.1, 1.0, 5.0];
    let rep = check_prop2_assumptions(&fp, &RewardSpec::put(5.0), &grid, &eps);
    assert!(rep.passed() && rep.counterexample.is_none());
    let bad = RewardSpec::terminal("neg", Arc::new(|x, s| -s * x), true, true);
    let rep = check_prop2_assumptions(&fp, &bad, &grid, &eps);
    assert!(!rep.monotone_in_s && rep.phi_ratio_ok);
    assert!(rep.counterexample.is_some());
}

#[test]
fn x_independent_trivial_and_degenerate() {
    let fp = put_model();
    let r = RewardSpec::running_max();
    assert!(rel(solve_x_independent(&fp, &r, 4.0, 0.0).unwrap(), 4.0) < 1e-15);
    assert!(matches!(
        solve_x_independent(&fp, &RewardSpec::put(5.0), 4.0, 1.0),
        Err(Error::RequiresXIndependent)
    ));
    let one: excursion_core::diffusion::ScalarFn = Arc::new(|_| 1.0);
    let zero: excursion_core::diffusion::ScalarFn = Arc::new(|_| 0.0);
    let flat = FundamentalPair::custom_unchecked(
        one.clone(), zero.clone(), zero.clone(), one, zero.clone(), zero,
        StateSpace::positive(), (0.5, 2.0),
    );
    assert!(matches!(solve_x_independent(&flat, &r, 2.0, 1.0), Err(Error::DivisionByZero(_))));
}

#[test]
fn smooth_fit_examples() {
    let fp = put_model();
    let (v, g) = smooth_fit_value(&fp, &RewardSpec::put(5.0), 5.0, 5.0 - X_STAR).unwrap();
    assert!(g.abs() < 1e-10);
    assert!(rel(v, PUT_VALUE_AT_5) < 1e-10);

    let r = RewardSpec::lookback(0.5);
    let p2 = solve_prop2(&fp, &r, 5.0, 5.0).unwrap();
    let (v, g) = smooth_fit_value(&fp, &r, 5.0, p2.l_star).unwrap();
    assert!(g > 0.0);
    assert!(rel(v, p2.value) < 1e-8);
    assert!(rel(g, p2.gamma_slope) < 1e-6);

    assert!(matches!(
        smooth_fit_value(&fp, &RewardSpec::put(5.0), 6.0, 1.0),
        Err(Error::NotDifferentiable { .. })
    ));
}

#[test]
fn smooth_fit_equals_x_independent_formula() {
    let fp = put_model();
    let r = RewardSpec::running_max();
    for &l in &[0.3, 1.0, 2.2] {
        let (v, _) = smooth_fit_value(&fp, &r, 3.0, l).unwrap();
        let xi = solve_x_independent(&fp, &r, 3.0, l).unwrap();
        assert!(rel(v, xi) < 1e-9);
    }
}

#[test]
fn survival_examples() {
    let fp = put_model();
    let p = Policy::stop_level(X_STAR);
    assert_eq!(survival_probability(&fp, &p, 5.0, 5.0).unwrap(), 1.0);
    // For a fixed stop level the excursion hazard integrates in closed form.
    let fx = fp.f(X_STAR);
    for &m in &[5.5, 7.0, 20.0] {
        let expect = (fp.f(5.0) - fx) / (fp.f(m) - fx);
        assert!(rel(survival_probability(&fp, &p, 5.0, m).unwrap(), expect) < 1e-10);
    }

    // Natural scale: F(x) = x on the positive half-line.
    let psi: excursion_core::diffusion::ScalarFn = Arc::new(|x| x);
    let one: excursion_core::diffusion::ScalarFn = Arc::new(|_| 1.0);
    let zero: excursion_core::diffusion::ScalarFn = Arc::new(|_| 0.0);
    let natural = FundamentalPair::custom_unchecked(
        psi, one.clone(), zero.clone(), one, zero.clone(), zero,
        StateSpace::positive(), (0.5, 10.0),
    );
    let c = 0.7;
    for &m in &[3.0, 4.0, 9.0] {
        let v = survival_probability(&natural, &Policy::constant(c), 2.0, m).unwrap();
        assert!(rel(v, (-(m - 2.0) / c).exp()) < 1e-10);
    }
}

#[test]
fn survival_is_multiplicative_and_monotone() {
    let fp = put_model();
    let p = Policy::proportional(0.3);
    let a = survival_probability(&fp, &p, 2.0, 3.0).unwrap();
    let b = survival_probability(&fp, &p, 3.0, 5.0).unwrap();
    let c = survival_probability(&fp, &p, 2.0, 5.0).unwrap();
    assert!((a * b - c).abs() < 1e-10);
    assert!(a > c && c > 0.0);
}

#[test]
fn survival_zero_threshold_stops() {
    let fp = put_model();
    let p = Policy::stop_level(3.0);
    assert_eq!(survival_probability(&fp, &p, 2.0, 4.0).unwrap(), 0.0);
}

#[test]
fn integral_constant_stop_level_put() {
    let fp = put_model();
    let r = RewardSpec::put(5.0);
    let p = Policy::stop_level(X_STAR);
    let v = policy_value_integral(&fp, &r, &p, 5.0, None, QuadratureSpec::default()).unwrap();
    assert!(rel(v.value, PUT_VALUE_AT_5) < 1e-6, "{v:?}");
    let other = Policy::stop_level(3.0);
    let v2 = policy_value_integral(&fp, &r, &other, 5.0, None, QuadratureSpec::default()).unwrap();
    let expect = fp.phi_ratio(5.0, 3.0) * 2.0;
    assert!(rel(v2.value, expect) < 1e-6);
}

#[test]
fn integral_lookback_matches_prop2() {
    let fp = put_model();
    let r = RewardSpec::lookback(0.5);
    let sol = solve_prop2(&fp, &r, 5.0, 5.0).unwrap();
    let beta = sol.stop_point() / 5.0;
    let p = Policy::proportional(1.0 - beta);
    let v = policy_value_integral(&fp, &r, &p, 5.0, None, QuadratureSpec::default()).unwrap();
    assert!(rel(v.value, sol.value) < 1e-6, "{} vs {}", v.value, sol.value);
    // A suboptimal threshold does no better.
    let worse = Policy::proportional(0.5);
    let w = policy_value_integral(&fp, &r, &worse, 5.0, None, QuadratureSpec::default()).unwrap();
    assert!(w.value < sol.value);
}

#[test]
fn integral_truncates_on_zero_reward() {
    let fp = put_model();
    let r = RewardSpec::terminal("cut", Arc::new(|_, s| if s < 4.0 { s } else { 0.0 }), false, true);
    let p = Policy::constant(1.0);
    let v = policy_value_integral(&fp, &r, &p, 2.0, Some(4.0), QuadratureSpec::default()).unwrap();
    let v_far = policy_value_integral(&fp, &r, &p, 2.0, Some(40.0), QuadratureSpec::default()).unwrap();
    assert!((v.value - v_far.value).abs() < 1e-8);
    assert_eq!(v.tail_weight, 0.0);
}

#[test]
fn integral_flags_short_truncation() {
    let fp = put_model();
    let p = Policy::proportional(0.3);
    let r = RewardSpec::lookback(0.5);
    let e = policy_value_integral(&fp, &r, &p, 5.0, Some(6.0), QuadratureSpec::default());
    assert!(matches!(e, Err(Error::TruncationTooSmall { .. })));
}

#[test]
fn integral_immediate_stop() {
    let fp = put_model();
    let r = RewardSpec::put(5.0);
    let v = policy_value_integral(&fp, &r, &Policy::immediate(), 3.0, None, QuadratureSpec::default()).unwrap();
    assert_eq!(v.value, 2.0);
}

#[test]
fn solvers_dominate_immediate_stop() {
    let fp = put_model();
    for s in [0.5, 1.0, 3.0, 4.0, 5.0, 8.0] {
        for b in [0.0, 0.1, 1.0, s * 0.9] {
            let put = solve_corollary1(&fp, &RewardSpec::put(5.0), s, b).unwrap();
            assert!(put.value >= (5.0f64 - s).max(0.0) - 1e-12);
            assert!(put.l_star >= 0.0 && put.l_star <= b);
            let lb = RewardSpec::lookback(0.5);
            let p2 = solve_prop2(&fp, &lb, s, b).unwrap();
            assert!(p2.value >= lb.h(s, s) - 1e-12 && p2.gamma_slope >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn argmax_invariant_under_scaling(c in 0.01f64..100.0, s in 3.0f64..9.0) {
        let fp = put_model();
        let base = solve_corollary1(&fp, &RewardSpec::put(5.0), s, s * 0.99).unwrap();
        let scaled_reward = RewardSpec::terminal("scaled", Arc::new(move |x, _| c * (5.0 - x).max(0.0)), true, false);
        let scaled = solve_corollary1(&fp, &scaled_reward, s, s * 0.99).unwrap();
        prop_assert!(rel(scaled.value, c * base.value) < 1e-10);
        prop_assert!((scaled.l_star - base.l_star).abs() < 1e-6 * s);
    }
}
