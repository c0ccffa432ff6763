use excursion_core::gbm_app::*;
use excursion_core::majorant::Region;
use excursion_core::vss::solve_corollary1;
use excursion_core::Error;

fn app() -> GbmAppParams {
    make_app(0.05, 0.1, 0.1, 0.8).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn constants() {
    let p = app();
    assert!(rel(p.alpha, 1.0 / 0.07625) < 1e-14);
    assert!((p.alpha - 13.1148).abs() < 1e-4);
    assert!((p.gamma0 - (-9.0 - 161f64.sqrt()) / 2.0).abs() < 1e-12);
    assert!((p.gamma1 - (-9.0 + 161f64.sqrt()) / 2.0).abs() < 1e-12);
    assert!(p.r > 0.0 && p.u > 0.0);
    // Inflection at x = 400, chord case up to x ~ 423.49, boundary stop value switch at ~168.90.
    assert!(rel(p.f_inv(p.r), 400.0) < 1e-10);
    assert!((p.s_chord_upper() - 423.4931).abs() < 1e-3, "{}", p.s_chord_upper());
    assert!((p.s_concave_lower() - 500.0).abs() < 1e-8);
    assert!((p.s_switch - 168.9007).abs() < 1e-3, "{}", p.s_switch);
}

#[test]
fn guards() {
    let p = app();
    let g = p.guards;
    assert!(!g.r_recomputed && g.r_residual <= 1e-8);
    // The printed threshold formula uses beta^c where beta^{delta c} is needed.
    assert!(g.u_recomputed && g.u_literal_residual > 1e-8 && g.u_residual <= 1e-8);
    assert_eq!(g.switch_reading, SwitchReading::Squared);
    assert!(g.switch_literal_residual > 1e-8 && g.switch_residual <= 1e-8);
}

#[test]
fn convergence_and_degenerate_inputs() {
    assert!(matches!(make_app(0.05, 0.1, 0.01, 0.8), Err(Error::ConvergenceViolated(_))));
    assert!(make_app(0.05, 0.1, 0.1, 1.0).is_err());
    let p = make_app(0.05, 0.1, 0.1, 0.0).unwrap();
    assert_eq!(p.boundary().b(7.0), 7.0);
}

#[test]
fn vss_branches_are_continuous() {
    let p = app();
    let lo = p.s_switch * (1.0 - 1e-12);
    let a = vss_closed_form(&p, lo).unwrap();
    let b = vss_closed_form(&p, p.s_switch).unwrap();
    assert!((a - b).abs() < 1e-8 * b.abs());
    assert!(matches!(vss_closed_form(&p, 0.0), Err(Error::NonpositiveState(_))));
    let big = 1e12;
    assert!((vss_closed_form(&p, big).unwrap() / big - 1.0).abs() < 1e-4);
}

#[test]
fn vss_matches_generic_corollary() {
    let p = app();
    let r = p.reward();
    for &s in &[0.5, 1.0, 2.0, 5.0, 50.0, 168.0, 170.0, 300.0] {
        let generic = solve_corollary1(&p.fp, &r, s, 0.2 * s).unwrap();
        let closed = vss_closed_form(&p, s).unwrap();
        assert!(rel(generic.value, closed) < 1e-8, "s={s}: {} vs {closed}", generic.value);
    }
}

#[test]
fn vss_dominates_reward() {
    let p = app();
    for i in 1..400 {
        let s = i as f64 * 1.5;
        let v = vss_closed_form(&p, s).unwrap();
        assert!(v >= p.h(s) - 1e-12 * p.h(s).abs());
        if s >= p.s_switch {
            assert_eq!(v, p.h(s));
        } else {
            assert!(v > p.h(s));
        }
    }
}

#[test]
fn fbar_feynman_kac() {
    let p = app();
    let r = p.reward();
    let pts: Vec<(f64, f64)> = (1..50).map(|i| (i as f64, 60.0)).collect();
    assert!(r.fbar_residual(&p.model, &pts) <= 1e-10);
}

#[test]
fn obstacle_convexity_flips_once() {
    let p = app();
    let n = 4000;
    let (a, b) = (p.r.ln() - 5.0, p.r.ln() + 5.0);
    let signs: Vec<bool> = (0..=n).map(|i| p.d2h_y((a + (b - a) * i as f64 / n as f64).exp()) > 0.0).collect();
    let flips = signs.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(flips, 1);
    assert!(p.d2h_y(p.r * 0.9) > 0.0 && p.d2h_y(p.r * 1.1) < 0.0);
}

#[test]
fn cases_are_ordered() {
    let p = app();
    assert_eq!(classify_case(&p, 1e-6).unwrap().case, GbmCase::ChordCase);
    assert_eq!(classify_case(&p, 600.0).unwrap().case, GbmCase::ConcaveCase);
    assert_eq!(classify_case(&p, 450.0).unwrap().case, GbmCase::TangencyCase);
    let mut stage = 0;
    for i in 1..2000 {
        let s = i as f64 * 0.5;
        let c = match classify_case(&p, s).unwrap().case {
            GbmCase::ChordCase => 0,
            GbmCase::TangencyCase => 1,
            GbmCase::ConcaveCase => 2,
        };
        assert!(c >= stage);
        stage = c;
    }
    assert_eq!(stage, 2);
}

fn w_at(p: &GbmAppParams, info: &CaseInfo, y: f64) -> f64 {
    match info.descriptor {
        WDescriptor::Chord { y_left, w_left, slope } => w_left + slope * (y - y_left),
        WDescriptor::Tangent { y_left, w_left, slope, r_s } => {
            if y >= r_s {
                p.h_y(y)
            } else {
                w_left + slope * (y - y_left)
            }
        }
        WDescriptor::Obstacle => p.h_y(y),
    }
}

#[test]
fn chord_and_tangency_agree_at_case_boundary() {
    let p = app();
    let s0 = p.s_chord_upper();
    let below = classify_case(&p, s0 * (1.0 - 1e-10)).unwrap();
    let above = classify_case(&p, s0 * (1.0 + 1e-10)).unwrap();
    assert_eq!(below.case, GbmCase::ChordCase);
    assert_eq!(above.case, GbmCase::TangencyCase);
    for k in 0..=10 {
        let x = s0 * (0.8 + 0.02 * k as f64);
        let y = p.f(x);
        let (a, b) = (w_at(&p, &below, y), w_at(&p, &above, y));
        assert!((a - b).abs() < 1e-6 * a.abs(), "x={x}: {a} vs {b}");
    }
    if let WDescriptor::Tangent { r_s, .. } = above.descriptor {
        assert!(rel(r_s, p.f(s0)) < 1e-6);
    } else {
        panic!("expected tangency");
    }
}

#[test]
fn tangency_point_properties() {
    let p = app();
    for &s in &[424.0, 430.0, 450.0, 480.0, 499.0] {
        let r_s = tangency_point(&p, s).unwrap();
        assert!(r_s > p.r && r_s < p.f(s));
        assert!(tangency_residual_at(&p, s, r_s) < 1e-10);
    }
    assert!(matches!(tangency_point(&p, 100.0), Err(Error::NoTangency { .. })));
    assert!(matches!(tangency_point(&p, 600.0), Err(Error::NoTangency { .. })));
}

#[test]
fn region_map_structure() {
    let p = app();
    let xs: Vec<f64> = (1..=300).map(|i| i as f64 * 2.0).collect();
    let ss: Vec<f64> = (1..=120).map(|i| i as f64 * 5.0).collect();
    let m = region_map(&p, &xs, &ss).unwrap();
    for (j, &s) in ss.iter().enumerate() {
        for (i, &x) in xs.iter().enumerate() {
            let reg = m.surface.region[j][i];
            if x < 0.8 * s - 1e-9 || x > s + 1e-9 {
                assert_eq!(reg, Region::Infeasible);
                continue;
            }
            let interior = x > 0.8 * s + 1e-9 && x < s - 1e-9;
            if s <= m.s_chord_upper && interior {
                assert_eq!(reg, Region::Continue, "s={s} x={x}");
            }
            if s > m.s_concave_lower {
                assert_eq!(reg, Region::Stop);
            }
            if s > m.s_chord_upper && s <= m.s_concave_lower {
                let xr = m.surface.rows[j].r_s_x.unwrap();
                if x >= xr + 1e-9 {
                    assert_eq!(reg, Region::Stop);
                } else if interior {
                    assert_eq!(reg, Region::Continue, "s={s} x={x} xr={xr}");
                }
            }
        }
    }
}
