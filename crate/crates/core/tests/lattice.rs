use std::sync::Arc;

use excursion_core::diffusion::make_gbm;
use excursion_core::gbm_app;
use excursion_core::quadrature::QuadratureSpec;
use excursion_core::reward::{BoundarySpec, RewardSpec};
use excursion_core::sim::{lattice_dp, max_stable_dt};
use excursion_core::vss::policy_value_integral;
use excursion_core::Error;

const X_STAR: f64 = 3.576039939453753;

fn grid(dx: f64, top: f64) -> Vec<f64> {
    let n = (top / dx).round() as usize;
    (1..=n).map(|i| i as f64 * dx).collect()
}

fn put_value(fp: &excursion_core::diffusion::FundamentalPair, x: f64) -> f64 {
    if x <= X_STAR {
        5.0 - x
    } else {
        (5.0 - X_STAR) * (x / X_STAR).powf(fp.power_exponents().unwrap().0)
    }
}

#[test]
fn zero_reward_gives_zero() {
    let (m, _) = make_gbm(0.05, 0.25, 0.15).unwrap();
    let zero = RewardSpec::terminal("zero", Arc::new(|_, _| 0.0), false, false);
    let xs = grid(0.05, 5.0);
    let dt = max_stable_dt(&m, 0.05, 5.0, 0.05);
    let r = lattice_dp(&m, &zero, &BoundarySpec::Proportional(0.5), &xs, &[1.0, 2.0, 5.0], dt).unwrap();
    for row in &r.v_dp {
        assert!(row.iter().all(|v| v.is_nan() || *v == 0.0));
    }
}

#[test]
fn put_boundary_and_values() {
    let (m, fp) = make_gbm(0.05, 0.25, 0.15).unwrap();
    let dx = 0.005;
    let xs = grid(dx, 25.0);
    let dt = max_stable_dt(&m, dx, 25.0, dx);
    let r = lattice_dp(&m, &RewardSpec::put(5.0), &BoundarySpec::NoAbsorption { floor: 0.0 }, &xs, &[5.0, 25.0], dt).unwrap();
    let b = r.stop_boundary(0).unwrap();
    assert!((b - X_STAR).abs() <= dx, "{b}");
    for (i, &x) in xs.iter().enumerate().filter(|(_, &x)| x >= 1.0 && x <= 5.0) {
        let exact = put_value(&fp, x);
        assert!((r.v_dp[0][i] - exact).abs() <= 0.02 * exact, "x={x}: {} vs {exact}", r.v_dp[0][i]);
        assert!(r.v_dp[0][i] >= 5.0 - x - 1e-12);
    }
    assert!(r.v_dp[0][xs.len() - 1].is_nan());
    assert!(r.bellman_residual < 1e-10);
}

#[test]
fn halving_the_step_converges() {
    let (m, fp) = make_gbm(0.05, 0.25, 0.15).unwrap();
    let run = |dx: f64| {
        let xs = grid(dx, 25.0);
        let dt = max_stable_dt(&m, dx, 25.0, dx);
        let r = lattice_dp(&m, &RewardSpec::put(5.0), &BoundarySpec::NoAbsorption { floor: 0.0 }, &xs, &[5.0, 25.0], dt).unwrap();
        let i = xs.iter().position(|&x| (x - 4.5).abs() < 1e-9).unwrap();
        r.v_dp[0][i]
    };
    let coarse = run(0.02);
    let fine = run(0.01);
    let exact = put_value(&fp, 4.5);
    assert!((fine - exact).abs() < (coarse - exact).abs() + 1e-4);
    assert!((fine - coarse).abs() < 0.01 * exact);
}

#[test]
fn liquidation_matches_policy_integral() {
    let p = gbm_app::make_app(0.05, 0.1, 0.1, 0.8).unwrap();
    let dx = 0.005;
    let xs = grid(dx, 100.0);
    let dt = max_stable_dt(&p.model, dx, 100.0, dx);
    let r = lattice_dp(&p.model, &p.reward(), &p.boundary(), &xs, &[1.0, 2.0, 100.0], dt).unwrap();
    let quad = QuadratureSpec::default();
    for (row, &s) in [1.0, 2.0].iter().enumerate() {
        let v = policy_value_integral(&p.fp, &p.reward(), &p.optimal_policy(), s, None, quad).unwrap();
        let exact = v.value + p.fbar(s);
        let i = xs.iter().position(|&x| (x - s).abs() < 1e-9).unwrap();
        assert!((r.v_dp[row][i] - exact).abs() <= 0.02 * exact, "s={s}: {} vs {exact}", r.v_dp[row][i]);
        // Stops only at the absorption edge.
        let first = xs.iter().position(|&x| x >= 0.8 * s - 1e-9).unwrap();
        assert!(r.stop_set[row][first], "s={s} x={} v={:?}", xs[first], &r.v_dp[row][first - 1..first + 2]);
        assert!(!r.stop_set[row][first + 2..=i].iter().any(|&b| b));
        assert!(r.v_dp[row][first - 1].is_nan());
    }
}

#[test]
fn lattice_errors() {
    let (m, _) = make_gbm(0.05, 0.25, 0.15).unwrap();
    let xs = grid(0.01, 5.0);
    let put = RewardSpec::put(5.0);
    let b = BoundarySpec::Proportional(0.5);
    assert!(matches!(lattice_dp(&m, &put, &b, &xs, &[2.0, 5.0], 1.0), Err(Error::UnstableScheme(_))));
    assert!(matches!(lattice_dp(&m, &put, &b, &xs, &[2.0], 0.0), Err(Error::NonpositiveDt(_))));
    assert!(matches!(lattice_dp(&m, &put, &b, &xs, &[2.0025], 1e-6), Err(Error::InvalidParameter(_))));
    assert!(matches!(lattice_dp(&m, &put, &b, &[1.0, 1.5, 1.7], &[1.5], 1e-6), Err(Error::InvalidParameter(_))));
}
