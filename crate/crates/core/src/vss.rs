//! Diagonal value `V(s, s)` and the optimal excursion threshold `l*(s)`.
//!
//! Starting from the running maximum `s` with `X = s`, a threshold policy
//! stops at `s - l*` unless `S` climbs first. The solvers here give the value
//! of that problem in closed or semi-closed form, plus the policy-value
//! integral used to evaluate arbitrary threshold functions.

use std::cell::Cell;
use std::fmt;

use crate::diffusion::FundamentalPair;
use crate::error::{Error, Result};
use crate::numeric::{central_diff, maximize_scalar, one_sided_diff, MaxOptions};
use crate::quadrature::{gk15, gk15_combine, gk15_nodes, integrate, QuadratureSpec};
use crate::reward::{Policy, RewardSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VssMethod {
    Corollary1,
    Prop2,
    Integral,
    XIndependent,
}

impl fmt::Display for VssMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VssMethod::Corollary1 => "corollary1",
            VssMethod::Prop2 => "prop2",
            VssMethod::Integral => "integral",
            VssMethod::XIndependent => "x_independent",
        })
    }
}

impl std::str::FromStr for VssMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "corollary1" => Ok(VssMethod::Corollary1),
            "prop2" => Ok(VssMethod::Prop2),
            "integral" => Ok(VssMethod::Integral),
            "x_independent" => Ok(VssMethod::XIndependent),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VssSolution {
    pub s: f64,
    pub l_star: f64,
    pub value: f64,
    /// Slope of the tangent line in transformed coordinates at `F(s - l*)`.
    pub gamma_slope: f64,
    pub method: VssMethod,
    pub boundary_binding: bool,
}

impl VssSolution {
    pub fn stop_point(&self) -> f64 {
        self.s - self.l_star
    }
}

const BINDING_TOL: f64 = 1e-9;

/// Largest admissible threshold: `b_s`, pulled inside the state space when
/// `s - b_s` reaches the floor.
fn search_upper(fp: &FundamentalPair, s: f64, b_s: f64) -> Result<f64> {
    if !(b_s >= 0.0) {
        return Err(Error::EmptyDomain(b_s));
    }
    let ss = fp.state_space();
    ss.check(s)?;
    let room = s - ss.lo;
    if b_s < room {
        return Ok(b_s);
    }
    if !room.is_finite() {
        return Err(Error::InvalidParameter("unbounded threshold range on an unbounded state space".into()));
    }
    Ok(room * (1.0 - 1e-9))
}

fn is_binding(l_star: f64, upper: f64) -> bool {
    upper == 0.0 || upper - l_star <= BINDING_TOL * upper
}

/// Slope `gamma` implied by a diagonal value through the tangent-line identity
/// `V/phi(s) = h(x)/phi(x) + gamma (F(s) - F(x))`.
fn consistency_slope(fp: &FundamentalPair, reward: &RewardSpec, s: f64, l: f64, value: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    let x = s - l;
    let lhs = value / fp.phi(s) - reward.h(x, s) / fp.phi(x);
    let v = lhs / (fp.f(s) - fp.f(x));
    // Roundoff when the tangent is horizontal.
    if v.abs() < 1e-12 * (value / fp.phi(s)).abs() / fp.f(s).abs().max(1e-300) {
        0.0
    } else {
        v
    }
}

/// Optimal threshold for a reward independent of the running maximum:
/// maximize `phi(s)/phi(s - z) h(s - z)` over `z` in `[0, b_s]`.
pub fn solve_corollary1(fp: &FundamentalPair, reward: &RewardSpec, s: f64, b_s: f64) -> Result<VssSolution> {
    if reward.s_dependent {
        return Err(Error::RequiresSIndependent);
    }
    let upper = search_upper(fp, s, b_s)?;
    let obj = |z: f64| fp.phi_ratio(s, s - z) * reward.h(s - z, s);
    let r = maximize_scalar(obj, 0.0, upper, MaxOptions::default());
    let (l_star, value) = if r.value < reward.h(s, s) || upper == 0.0 {
        (0.0, reward.h(s, s))
    } else {
        (r.x, r.value)
    };
    Ok(VssSolution {
        s,
        l_star,
        value,
        gamma_slope: consistency_slope(fp, reward, s, l_star, value),
        method: VssMethod::Corollary1,
        boundary_binding: b_s == 0.0 || is_binding(l_star, upper),
    })
}

/// `Q(s; z) = F'(s) phi'(s) / (phi''(s) [F(s) - F(s - z)] + F'(s) phi'(s))`.
/// `None` when the denominator leaves the admissible sign.
pub fn q_factor(fp: &FundamentalPair, s: f64, z: f64) -> Option<f64> {
    if z == 0.0 {
        return Some(1.0);
    }
    let num = fp.df(s) * fp.dphi(s);
    let den = fp.d2phi(s) * (fp.f(s) - fp.f(s - z)) + num;
    let q = num / den;
    if q > 0.0 && q.is_finite() {
        Some(q)
    } else {
        None
    }
}

/// Result of [`check_prop2_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prop2Report {
    pub monotone_in_s: bool,
    pub phi_ratio_ok: bool,
    pub counterexample: Option<String>,
}

impl Prop2Report {
    pub fn passed(&self) -> bool {
        self.monotone_in_s && self.phi_ratio_ok
    }
}

/// Check that `h(x, .)` is nondecreasing on `s_grid` and that
/// `phi(s)/phi(s+e) * phi'(s+e)/phi'(s) < 1` for every `s` in `s_grid`, `e` in `eps_grid`.
pub fn check_prop2_assumptions(fp: &FundamentalPair, reward: &RewardSpec, s_grid: &[f64], eps_grid: &[f64]) -> Prop2Report {
    let mut report = Prop2Report { monotone_in_s: true, phi_ratio_ok: true, counterexample: None };
    let mut sorted: Vec<f64> = s_grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    'outer: for (i, &s1) in sorted.iter().enumerate() {
        for &s2 in &sorted[i + 1..] {
            for &x in sorted.iter().take(i + 1) {
                let (h1, h2) = (reward.h(x, s1), reward.h(x, s2));
                if h2 < h1 - 1e-12 * (1.0 + h1.abs()) {
                    report.monotone_in_s = false;
                    report.counterexample = Some(format!("h({x}, {s2}) = {h2} < h({x}, {s1}) = {h1}"));
                    break 'outer;
                }
            }
        }
    }
    let ss = fp.state_space();
    'outer2: for &s in &sorted {
        for &e in eps_grid {
            if !ss.contains(s) || !ss.contains(s + e) || e <= 0.0 {
                continue;
            }
            let ratio = fp.phi_ratio(s, s + e) * fp.dphi(s + e) / fp.dphi(s);
            if !(ratio < 1.0) {
                report.phi_ratio_ok = false;
                if report.counterexample.is_none() {
                    report.counterexample = Some(format!("phi ratio at s={s}, eps={e} is {ratio} >= 1"));
                }
                break 'outer2;
            }
        }
    }
    report
}

fn local_assumption_grid(fp: &FundamentalPair, s: f64) -> (Vec<f64>, Vec<f64>) {
    let ss = fp.state_space();
    let d = 0.25 * s.abs().max(1.0);
    let s_grid: Vec<f64> = (-2..=4).map(|k| s + d * k as f64).filter(|&v| ss.contains(v)).collect();
    let eps_grid: Vec<f64> = [1e-3, 1e-2, 0.1, 0.5, 1.0].iter().map(|e| e * d).collect();
    (s_grid, eps_grid)
}

/// Maximize `phi(s)/phi(s - z) Q(s; z) h(s - z, s)` over `[0, b_s]` after
/// checking the monotonicity and phi-ratio assumptions near `s`.
pub fn solve_prop2(fp: &FundamentalPair, reward: &RewardSpec, s: f64, b_s: f64) -> Result<VssSolution> {
    let (sg, eg) = local_assumption_grid(fp, s);
    let report = check_prop2_assumptions(fp, reward, &sg, &eg);
    if !report.passed() {
        return Err(Error::AssumptionViolated(report.counterexample.unwrap_or_default()));
    }
    solve_prop2_unchecked(fp, reward, s, b_s)
}

/// [`solve_prop2`] without the assumption check.
pub fn solve_prop2_unchecked(fp: &FundamentalPair, reward: &RewardSpec, s: f64, b_s: f64) -> Result<VssSolution> {
    let upper = search_upper(fp, s, b_s)?;
    let obj = |z: f64| match q_factor(fp, s, z) {
        Some(q) => fp.phi_ratio(s, s - z) * q * reward.h(s - z, s),
        None => f64::NEG_INFINITY,
    };
    let r = maximize_scalar(obj, 0.0, upper, MaxOptions::default());
    let (l_star, value) = if r.value < reward.h(s, s) || upper == 0.0 {
        (0.0, reward.h(s, s))
    } else {
        (r.x, r.value)
    };
    Ok(VssSolution {
        s,
        l_star,
        value,
        gamma_slope: consistency_slope(fp, reward, s, l_star, value),
        method: VssMethod::Prop2,
        boundary_binding: b_s == 0.0 || is_binding(l_star, upper),
    })
}

/// Value of stopping at `s - l*` for a reward that depends on `s` only.
pub fn solve_x_independent(fp: &FundamentalPair, reward: &RewardSpec, s: f64, l_star: f64) -> Result<f64> {
    if reward.x_dependent {
        return Err(Error::RequiresXIndependent);
    }
    let ss = fp.state_space();
    ss.check(s)?;
    let x = s - l_star;
    ss.check(x)?;
    let num = fp.dpsi(x) * fp.phi(s) - fp.psi(s) * fp.dphi(x);
    let den = fp.dpsi(x) * fp.phi(x) - fp.psi(x) * fp.dphi(x);
    if !(den.abs() > 1e-300) || !den.is_finite() || !num.is_finite() {
        return Err(Error::DivisionByZero(format!("psi'(x)phi(x) - psi(x)phi'(x) = {den} at x={x}")));
    }
    Ok(num / den * reward.h(s, s))
}

/// Value and tangent slope at `x = s - l*` from the smooth-fit condition:
/// `gamma = (h/phi)'(x) / F'(x)` and `V = phi(s) [h(x)/phi(x) + gamma (F(s) - F(x))]`.
pub fn smooth_fit_value(fp: &FundamentalPair, reward: &RewardSpec, s: f64, l_star: f64) -> Result<(f64, f64)> {
    if !(l_star > 0.0) {
        return Err(Error::InvalidParameter(format!("smooth fit needs an interior threshold, got {l_star}")));
    }
    let ss = fp.state_space();
    ss.check(s)?;
    let x = s - l_star;
    ss.check(x)?;
    let g = |t: f64| reward.h(t, s) / fp.phi(t);
    let room = (x - ss.lo).min(l_star);
    let hk = 1e-4 * room.min(x.abs().max(l_star));
    let left = one_sided_diff(g, x, -hk);
    let right = one_sided_diff(g, x, hk);
    let scale = left.abs() + right.abs() + g(x).abs() / x.abs().max(l_star);
    if (right - left).abs() > 1e-4 * scale {
        return Err(Error::NotDifferentiable { x, left, right });
    }
    let d = central_diff(g, x, 0.1 * room);
    let gamma = d / fp.df(x);
    let value = fp.phi(s) * (g(x) + gamma * (fp.f(s) - fp.f(x)));
    Ok((value, gamma))
}

/// Hazard `F'(u) / (F(u) - F(u - l(u)))` of the excursion-height measure.
fn hazard(fp: &FundamentalPair, policy: &Policy, u: f64) -> Result<f64> {
    let l = policy.l(u);
    let ss = fp.state_space();
    let fu = fp.f(u);
    let low = u - l;
    let fl = if low <= ss.lo {
        let v = fp.f(ss.lo);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    } else {
        fp.f(low)
    };
    let den = fu - fl;
    if !(den > 1e-300 * fu.abs().max(1e-300)) {
        return Err(Error::ZeroDenominator(u));
    }
    Ok(fp.df(u) / den)
}

/// First level in `[a, b]` where the threshold hits zero, located by a scan
/// followed by bisection.
fn first_zero_threshold(policy: &Policy, a: f64, b: f64) -> Option<f64> {
    if policy.l(a) <= 0.0 {
        return Some(a);
    }
    const N: usize = 1024;
    let mut prev = a;
    for i in 1..=N {
        let m = if i == N { b } else { a + (b - a) * i as f64 / N as f64 };
        if policy.l(m) <= 0.0 {
            let (mut lo, mut hi) = (prev, m);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if policy.l(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        prev = m;
    }
    None
}

fn cumulative_hazard(fp: &FundamentalPair, policy: &Policy, a: f64, b: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let failure = Cell::new(None);
    let lam = |u: f64| match hazard(fp, policy, u) {
        Ok(v) => v,
        Err(_) => {
            if failure.get().is_none() {
                failure.set(Some(u));
            }
            0.0
        }
    };
    let spec = QuadratureSpec { abs_tol: 1e-14, rel_tol: 1e-13, max_subdivisions: 50_000 };
    let (v, _) = integrate(lam, a, b, spec);
    match failure.get() {
        Some(u) => Err(Error::ZeroDenominator(u)),
        None => Ok(v),
    }
}

/// Probability that the excursion process started at level `s` reaches `m`
/// before the policy stops it: `exp(-int_s^m F'(u) / (F(u) - F(u - l(u))) du)`.
///
/// A zero threshold at some level `u0 <= m` means stopping at `u0`, so the
/// probability is zero there.
pub fn survival_probability(fp: &FundamentalPair, policy: &Policy, s: f64, m: f64) -> Result<f64> {
    let ss = fp.state_space();
    ss.check(s)?;
    ss.check(m)?;
    if m < s {
        return Err(Error::InvalidParameter(format!("need s <= m, got s={s}, m={m}")));
    }
    if m == s {
        return Ok(1.0);
    }
    if first_zero_threshold(policy, s, m).is_some() {
        return Ok(0.0);
    }
    Ok((-cumulative_hazard(fp, policy, s, m)?).exp())
}

/// Outcome of [`policy_value_integral`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralResult {
    pub value: f64,
    /// Upper integration limit actually used.
    pub m_max: f64,
    /// Estimated relative mass beyond `m_max`.
    pub tail_weight: f64,
    pub error_estimate: f64,
}

const TRUNCATION_TARGET: f64 = 1e-10;
const TRUNCATION_LIMIT: f64 = 1e-8;

/// Value of a threshold policy started at `(s, s)`:
///
/// `int_s^M phi(s)/phi(m - l(m)) exp(-Lambda(m)) F'(m) h(m - l(m), m) / (F(m) - F(m - l(m))) dm`
///
/// where `Lambda` is the cumulative hazard. The outer integral is adaptive
/// Gauss–Kronrod; `Lambda` at every outer node is accumulated on the same
/// panels. Without `m_max` the range doubles until the remaining mass is
/// below 1e-10.
pub fn policy_value_integral(
    fp: &FundamentalPair,
    reward: &RewardSpec,
    policy: &Policy,
    s: f64,
    m_max: Option<f64>,
    quad: QuadratureSpec,
) -> Result<IntegralResult> {
    let ss = fp.state_space();
    ss.check(s)?;
    let l0 = policy.l(s);
    if l0 <= 0.0 {
        return Ok(IntegralResult { value: reward.h(s, s), m_max: s, tail_weight: 0.0, error_estimate: 0.0 });
    }
    let x0 = s - l0;
    let scale = if x0 > ss.lo { (fp.phi_ratio(s, x0) * reward.h(x0, s)).abs() } else { 0.0 };
    let scale = scale.max(reward.h(s, s).abs()).max(1e-300);
    let tail = |m: f64, lam: f64| -> f64 {
        let x = m - policy.l(m);
        if x <= ss.lo {
            return 0.0;
        }
        (fp.phi_ratio(s, x) * reward.h(x, m)).abs() * (-lam).exp() / scale
    };

    let (upper, stop_at, tail_weight) = match m_max {
        Some(mm) => {
            ss.check(mm)?;
            if mm <= s {
                return Err(Error::InvalidParameter(format!("m_max={mm} must exceed s={s}")));
            }
            match first_zero_threshold(policy, s, mm) {
                Some(u0) => (u0, Some(u0), 0.0),
                None => {
                    let lam = cumulative_hazard(fp, policy, s, mm)?;
                    let w = tail(mm, lam);
                    if w > TRUNCATION_LIMIT {
                        return Err(Error::TruncationTooSmall { m_max: mm, weight: w });
                    }
                    (mm, None, w)
                }
            }
        }
        None => {
            let d0 = l0.max(1e-2 * s.abs().max(1.0));
            let mut a = s;
            let mut lam = 0.0;
            let mut k = 0;
            let mut below = 0;
            loop {
                let b = s + d0 * 2f64.powi(k);
                if !ss.contains(b) {
                    return Err(Error::TruncationTooSmall { m_max: a, weight: f64::NAN });
                }
                if let Some(u0) = first_zero_threshold(policy, a, b) {
                    break (u0, Some(u0), 0.0);
                }
                lam += cumulative_hazard(fp, policy, a, b)?;
                let w = tail(b, lam);
                below = if w < TRUNCATION_TARGET { below + 1 } else { 0 };
                if below >= 2 {
                    break (b, None, w);
                }
                a = b;
                k += 1;
                if k > 1100 {
                    return Err(Error::TruncationTooSmall { m_max: b, weight: w });
                }
            }
        }
    };

    let integrand = |m: f64, lam: f64| -> Result<f64> {
        let l = policy.l(m);
        let x = m - l;
        if x <= ss.lo {
            return Ok(0.0);
        }
        let hz = hazard(fp, policy, m)?;
        Ok(fp.phi_ratio(s, x) * (-lam).exp() * hz * reward.h(x, m))
    };

    let mut value = 0.0;
    let mut err = 0.0;
    let mut lam_end = 0.0;
    if upper > s {
        let d = upper - s;
        let c0 = l0.min(d).max(1e-12 * d);
        let n_init = 48;
        let growth = 1.0 + d / c0;
        let bps: Vec<f64> = (0..=n_init)
            .map(|k| if k == n_init { upper } else { s - c0 + c0 * growth.powf(k as f64 / n_init as f64) })
            .collect();
        let tol_density = quad.abs_tol / d;
        let mut ctx = PanelCtx { fp, policy, quad, tol_density, panels: 0 };
        let mut lam = 0.0;
        for w in bps.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            let (v, e, lam_b) = ctx.panel(&integrand, w[0], w[1], lam, 0)?;
            value += v;
            err += e;
            lam = lam_b;
        }
        lam_end = lam;
    }
    if let Some(u0) = stop_at {
        if u0 > s {
            value += fp.phi_ratio(s, u0) * (-lam_end).exp() * reward.h(u0, u0);
        } else {
            value = reward.h(s, s);
        }
    }
    Ok(IntegralResult { value, m_max: upper, tail_weight, error_estimate: err })
}

struct PanelCtx<'a> {
    fp: &'a FundamentalPair,
    policy: &'a Policy,
    quad: QuadratureSpec,
    tol_density: f64,
    panels: usize,
}

impl PanelCtx<'_> {
    fn lam_gk(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        let failure = Cell::new(None);
        let f = |u: f64| match hazard(self.fp, self.policy, u) {
            Ok(v) => v,
            Err(_) => {
                if failure.get().is_none() {
                    failure.set(Some(u));
                }
                0.0
            }
        };
        let r = gk15(&f, a, b);
        match failure.get() {
            Some(u) => Err(Error::ZeroDenominator(u)),
            None => Ok(r),
        }
    }

    fn panel<G>(&mut self, g: &G, a: f64, b: f64, lam_a: f64, depth: usize) -> Result<(f64, f64, f64)>
    where
        G: Fn(f64, f64) -> Result<f64>,
    {
        self.panels += 1;
        let nodes = gk15_nodes(a, b);
        let mut vals = [0.0; 15];
        let mut inner_err: f64 = 0.0;
        for (v, &t) in vals.iter_mut().zip(nodes.iter()) {
            let (li, ei) = self.lam_gk(a, t)?;
            inner_err = inner_err.max(ei);
            *v = g(t, lam_a + li)?;
        }
        let (lam_ab, e_ab) = self.lam_gk(a, b)?;
        inner_err = inner_err.max(e_ab);
        let (v, e) = gk15_combine(a, b, &vals);
        let tol = (self.tol_density * (b - a)).max(self.quad.rel_tol * v.abs());
        let lam_tol = 1e-12 * (1.0 + lam_a.abs());
        let m = 0.5 * (a + b);
        let splittable = depth < 60 && self.panels < self.quad.max_subdivisions && m > a && m < b;
        if (e <= tol && inner_err <= lam_tol) || !splittable {
            return Ok((v, e, lam_a + lam_ab));
        }
        let (v1, e1, lam_m) = self.panel(g, a, m, lam_a, depth + 1)?;
        let (v2, e2, lam_b) = self.panel(g, m, b, lam_m, depth + 1)?;
        Ok((v1 + v2, e1 + e2, lam_b))
    }
}

/// Diagonal value of a given policy via [`policy_value_integral`].
pub fn solve_integral(fp: &FundamentalPair, reward: &RewardSpec, policy: &Policy, s: f64, b_s: f64) -> Result<VssSolution> {
    let r = policy_value_integral(fp, reward, policy, s, None, QuadratureSpec::default())?;
    let l = policy.l(s);
    Ok(VssSolution {
        s,
        l_star: l,
        value: r.value,
        gamma_slope: consistency_slope(fp, reward, s, l, r.value),
        method: VssMethod::Integral,
        boundary_binding: b_s == 0.0 || is_binding(l, b_s),
    })
}

/// Dispatch on the method used by the surface builder and the CLI.
///
/// `Integral` evaluates the policy that stops at the Corollary 1 or
/// Proposition 2 threshold for every level, depending on `s`-dependence.
pub fn solve(fp: &FundamentalPair, reward: &RewardSpec, s: f64, b_s: f64, method: VssMethod) -> Result<VssSolution> {
    match method {
        VssMethod::Corollary1 => solve_corollary1(fp, reward, s, b_s),
        VssMethod::Prop2 => solve_prop2(fp, reward, s, b_s),
        VssMethod::XIndependent => {
            let base = solve_prop2(fp, reward, s, b_s)?;
            let value = solve_x_independent(fp, reward, s, base.l_star)?;
            Ok(VssSolution { value, method: VssMethod::XIndependent, ..base })
        }
        VssMethod::Integral => Err(Error::InvalidParameter(
            "the integral method needs an explicit policy; use solve_integral".into(),
        )),
    }
}
