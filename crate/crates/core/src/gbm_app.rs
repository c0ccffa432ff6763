//! Closed-form drawdown-liquidation problem under GBM.
//!
//! A fund earns income `X^{1/2}` while running, can be liquidated for `X`,
//! and is shut down with nothing once `X` falls below `beta S`. With
//! `alpha = -1/(mu/2 - sigma^2/8 - q)` the income potential is `alpha x^{1/2}`
//! and the net reward is `h(x) = x - alpha x^{1/2}`. In the `F` scale
//! `H(y) = y^a - alpha y^c` with `a = (1 - gamma0)/delta`,
//! `c = (1/2 - gamma0)/delta`, `delta = gamma1 - gamma0`.

use std::fmt;

use crate::diffusion::{make_gbm, DiffusionModel, FundamentalPair};
use crate::error::{Error, Result};
use crate::majorant::{Region, RowInfo, ValueSurface};
use crate::numeric::bisect;
use crate::reward::{BoundarySpec, Policy, RewardSpec};
use crate::vss::{VssMethod, VssSolution};

const GUARD_TOL: f64 = 1e-8;

/// Which reading of the `V(s, s)` regime threshold was accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchReading {
    /// `alpha (1 - beta^{1/2-gamma0}) / (1 - beta^{1-gamma0})` as printed.
    Literal,
    /// The same ratio squared.
    Squared,
}

/// Residuals of the closed-form constants and whether a fallback was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardReport {
    pub r_literal: f64,
    pub r_literal_residual: f64,
    pub r_recomputed: bool,
    pub r_residual: f64,
    pub u_literal: f64,
    pub u_literal_residual: f64,
    pub u_recomputed: bool,
    pub u_residual: f64,
    pub switch_reading: SwitchReading,
    pub switch_literal_residual: f64,
    pub switch_residual: f64,
}

#[derive(Debug, Clone)]
pub struct GbmAppParams {
    pub mu: f64,
    pub sigma: f64,
    pub q: f64,
    pub beta: f64,
    pub alpha: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    /// Inflection point of `H`.
    pub r: f64,
    /// Largest `F(s)` for which the chord between anchors dominates `H`.
    pub u: f64,
    /// Level where `V(s, s)` switches from the boundary-stop branch to `h(s, s)`.
    pub s_switch: f64,
    pub guards: GuardReport,
    pub model: DiffusionModel,
    pub fp: FundamentalPair,
}

impl GbmAppParams {
    pub fn delta(&self) -> f64 {
        self.gamma1 - self.gamma0
    }

    fn exps(&self) -> (f64, f64) {
        let d = self.delta();
        ((1.0 - self.gamma0) / d, (0.5 - self.gamma0) / d)
    }

    /// `H(y) = y^a - alpha y^c`.
    pub fn h_y(&self, y: f64) -> f64 {
        let (a, c) = self.exps();
        y.powf(a) - self.alpha * y.powf(c)
    }

    pub fn dh_y(&self, y: f64) -> f64 {
        let (a, c) = self.exps();
        a * y.powf(a - 1.0) - self.alpha * c * y.powf(c - 1.0)
    }

    pub fn d2h_y(&self, y: f64) -> f64 {
        let (a, c) = self.exps();
        a * (a - 1.0) * y.powf(a - 2.0) - self.alpha * c * (c - 1.0) * y.powf(c - 2.0)
    }

    /// Net reward `x - alpha x^{1/2}`.
    pub fn h(&self, x: f64) -> f64 {
        x - self.alpha * x.sqrt()
    }

    /// `h(x)/phi(x)`, evaluated in `x` to avoid a round trip through `F`.
    pub fn h_over_phi(&self, x: f64) -> f64 {
        x.powf(1.0 - self.gamma0) - self.alpha * x.powf(0.5 - self.gamma0)
    }

    pub fn f(&self, x: f64) -> f64 {
        self.fp.f(x)
    }

    pub fn f_inv(&self, y: f64) -> f64 {
        self.fp.f_inv(y)
    }

    pub fn reward(&self) -> RewardSpec {
        RewardSpec::power_income(&self.model, 0.5, true).expect("convergence checked in make_app")
    }

    pub fn boundary(&self) -> BoundarySpec {
        BoundarySpec::Proportional(self.beta)
    }

    /// Income potential `alpha x^{1/2}`.
    pub fn fbar(&self, x: f64) -> f64 {
        self.alpha * x.sqrt()
    }

    /// Level `F^{-1}(u)` below which the chord case applies.
    pub fn s_chord_upper(&self) -> f64 {
        self.f_inv(self.u)
    }

    /// Level `F^{-1}(r)/beta` above which the obstacle is concave on the whole excursion.
    pub fn s_concave_lower(&self) -> f64 {
        if self.beta == 0.0 {
            f64::INFINITY
        } else {
            self.f_inv(self.r) / self.beta
        }
    }

    /// Threshold policy behind the diagonal value: ride the drawdown to the
    /// boundary below `s_switch`, stop at once above it.
    pub fn optimal_policy(&self) -> Policy {
        let (beta, sw) = (self.beta, self.s_switch);
        Policy::new("liquidation", std::sync::Arc::new(move |m| if m < sw { (1.0 - beta) * m } else { 0.0 }))
    }
}

impl fmt::Display for GbmAppParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "alpha={:.6} gamma0={:.6} gamma1={:.6} r={:.6e} u={:.6e} s_switch={:.6}",
            self.alpha, self.gamma0, self.gamma1, self.r, self.u, self.s_switch
        )
    }
}

/// Relative size of `H''(y)`.
fn inflection_residual(p: &GbmAppParams, y: f64) -> f64 {
    let (a, c) = p.exps();
    let scale = (a * (a - 1.0) * y.powf(a - 2.0)).abs() + (p.alpha * c * (c - 1.0) * y.powf(c - 2.0)).abs();
    p.d2h_y(y).abs() / scale
}

/// Sign-carrying comparison of the tangent at `y` with `H` at `beta^delta y`,
/// divided by `y^a` so that it stays finite over the whole range.
fn tangency_gap_scaled(p: &GbmAppParams, y: f64) -> f64 {
    let (a, c) = p.exps();
    let bd = p.beta.powf(p.delta());
    let pa = 1.0 + a * (bd - 1.0) - bd.powf(a);
    let pc = 1.0 + c * (bd - 1.0) - bd.powf(c);
    pa - p.alpha * y.powf(c - a) * pc
}

/// Relative residual of `L_y(beta^delta y) = H(beta^delta y)`.
fn tangency_residual(p: &GbmAppParams, y: f64) -> f64 {
    let (a, c) = p.exps();
    let bd = p.beta.powf(p.delta());
    let scale = (1.0 + a + bd.powf(a)) + p.alpha * y.powf(c - a) * (1.0 + c + bd.powf(c));
    tangency_gap_scaled(p, y).abs() / scale
}

fn branch_low(beta: f64, gamma0: f64, alpha: f64, s: f64) -> f64 {
    beta.powf(1.0 - gamma0) * s - alpha * beta.powf(0.5 - gamma0) * s.sqrt()
}

fn switch_residual(beta: f64, gamma0: f64, alpha: f64, s: f64) -> f64 {
    let hi = s - alpha * s.sqrt();
    (branch_low(beta, gamma0, alpha, s) - hi).abs() / (s + alpha * s.sqrt())
}

pub fn make_app(mu: f64, sigma: f64, q: f64, beta: f64) -> Result<GbmAppParams> {
    if !(sigma > 0.0) {
        return Err(Error::NonpositiveSigma(sigma));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta must lie in [0, 1), got {beta}")));
    }
    let k = mu / 2.0 - sigma * sigma / 8.0 - q;
    if !(k < 0.0) {
        return Err(Error::ConvergenceViolated(k));
    }
    let alpha = -1.0 / k;
    let (model, fp) = make_gbm(mu, sigma, q)?;
    let (gamma0, gamma1) = fp.power_exponents().expect("gbm pair");
    if !(gamma1 > 1.0) {
        return Err(Error::DegenerateRoots(format!("need gamma1 > 1, got {gamma1}")));
    }
    let delta = gamma1 - gamma0;

    let mut p = GbmAppParams {
        mu,
        sigma,
        q,
        beta,
        alpha,
        gamma0,
        gamma1,
        r: f64::NAN,
        u: f64::NAN,
        s_switch: f64::NAN,
        guards: GuardReport {
            r_literal: f64::NAN,
            r_literal_residual: f64::NAN,
            r_recomputed: false,
            r_residual: f64::NAN,
            u_literal: f64::NAN,
            u_literal_residual: f64::NAN,
            u_recomputed: false,
            u_residual: f64::NAN,
            switch_reading: SwitchReading::Literal,
            switch_literal_residual: f64::NAN,
            switch_residual: f64::NAN,
        },
        model,
        fp,
    };

    let r_lit = (alpha * (0.5 - gamma0) * (0.5 - gamma1) / ((1.0 - gamma0) * (1.0 - gamma1))).powf(2.0 * delta);
    let r_lit_res = inflection_residual(&p, r_lit);
    p.guards.r_literal = r_lit;
    p.guards.r_literal_residual = r_lit_res;
    if r_lit_res <= GUARD_TOL && r_lit > 0.0 {
        p.r = r_lit;
    } else {
        let ln_y = bisect(|t| p.d2h_y(t.exp()).signum() * inflection_residual(&p, t.exp()), -700.0, 700.0, 400)
            .ok_or_else(|| Error::InvalidParameter("obstacle has no inflection point".into()))?;
        p.r = ln_y.exp();
        p.guards.r_recomputed = true;
    }
    p.guards.r_residual = inflection_residual(&p, p.r);

    let (a, c) = p.exps();
    let bd = beta.powf(delta);
    let num = alpha * (c + beta.powf(c) - bd * c - 1.0);
    let den = a + beta.powf(a) - bd * a - 1.0;
    let u_lit = (num / den).powf(2.0 * delta);
    let u_lit_res = tangency_residual(&p, u_lit);
    p.guards.u_literal = u_lit;
    p.guards.u_literal_residual = u_lit_res;
    if u_lit_res <= GUARD_TOL && u_lit > 0.0 {
        p.u = u_lit;
    } else {
        let g = |t: f64| tangency_gap_scaled(&p, t.exp());
        let (lo, hi) = (-700.0, 700.0);
        p.u = match bisect(g, lo, hi, 400) {
            Some(t) => t.exp(),
            None if g(hi) <= 0.0 => f64::INFINITY,
            None => 0.0,
        };
        p.guards.u_recomputed = true;
    }
    p.guards.u_residual = if p.u.is_finite() && p.u > 0.0 { tangency_residual(&p, p.u) } else { 0.0 };

    let ratio = alpha * (1.0 - beta.powf(0.5 - gamma0)) / (1.0 - beta.powf(1.0 - gamma0));
    let lit_res = switch_residual(beta, gamma0, alpha, ratio);
    let sq_res = switch_residual(beta, gamma0, alpha, ratio * ratio);
    p.guards.switch_literal_residual = lit_res;
    if lit_res <= GUARD_TOL {
        p.s_switch = ratio;
        p.guards.switch_reading = SwitchReading::Literal;
        p.guards.switch_residual = lit_res;
    } else {
        p.s_switch = ratio * ratio;
        p.guards.switch_reading = SwitchReading::Squared;
        p.guards.switch_residual = sq_res;
    }
    Ok(p)
}

/// Diagonal value `V(s, s)`.
pub fn vss_closed_form(p: &GbmAppParams, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::NonpositiveState(s));
    }
    Ok(if s < p.s_switch { branch_low(p.beta, p.gamma0, p.alpha, s) } else { p.h(s) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GbmCase {
    /// The chord between the anchors is the majorant.
    ChordCase,
    /// Chord from the left anchor to a tangency point, then the obstacle.
    TangencyCase,
    /// The obstacle is concave on the whole excursion.
    ConcaveCase,
}

impl fmt::Display for GbmCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GbmCase::ChordCase => "chord",
            GbmCase::TangencyCase => "tangency",
            GbmCase::ConcaveCase => "concave",
        })
    }
}

/// Closed-form `W` on `[F(beta s), F(s)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WDescriptor {
    /// `W(y) = slope (y - y_left) + w_left` throughout.
    Chord { y_left: f64, w_left: f64, slope: f64 },
    /// The chord up to `r_s`, then `H`.
    Tangent { y_left: f64, w_left: f64, slope: f64, r_s: f64 },
    Obstacle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseInfo {
    pub case: GbmCase,
    pub descriptor: WDescriptor,
}

pub fn classify_case(p: &GbmAppParams, s: f64) -> Result<CaseInfo> {
    if !(s > 0.0) {
        return Err(Error::NonpositiveState(s));
    }
    let ys = p.f(s);
    let xl = p.beta * s;
    let yl = p.f(xl);
    let wl = p.h_over_phi(xl);
    if ys <= p.u {
        let wr = vss_closed_form(p, s)? / p.fp.phi(s);
        return Ok(CaseInfo {
            case: GbmCase::ChordCase,
            descriptor: WDescriptor::Chord { y_left: yl, w_left: wl, slope: (wr - wl) / (ys - yl) },
        });
    }
    if yl > p.r {
        return Ok(CaseInfo { case: GbmCase::ConcaveCase, descriptor: WDescriptor::Obstacle });
    }
    let r_s = tangency_point(p, s)?;
    Ok(CaseInfo {
        case: GbmCase::TangencyCase,
        descriptor: WDescriptor::Tangent { y_left: yl, w_left: wl, slope: (p.h_y(r_s) - wl) / (r_s - yl), r_s },
    })
}

fn tangency_eq(p: &GbmAppParams, yl: f64, hl: f64, y: f64) -> (f64, f64) {
    let t = p.dh_y(y) * (y - yl) - (p.h_y(y) - hl);
    let scale = p.h_y(y).abs() + hl.abs() + (p.dh_y(y) * (y - yl)).abs();
    (t, scale)
}

/// Tangency point `R_s` (in `y`) of the line from the left anchor to `H`.
pub fn tangency_point(p: &GbmAppParams, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::NonpositiveState(s));
    }
    let ys = p.f(s);
    let yl = p.f(p.beta * s);
    let hl = p.h_y(yl);
    let lo = p.r.max(yl);
    let hi = ys;
    let (t_lo, _) = tangency_eq(p, yl, hl, lo);
    let (t_hi, _) = tangency_eq(p, yl, hl, hi);
    if yl > p.r || !(lo < hi) || !(t_lo >= 0.0 && t_hi < 0.0) {
        return Err(Error::NoTangency { lo, hi });
    }
    // Safeguarded Newton: T is decreasing on (r, F(s)) since T' = H''(y)(y - yl) < 0 there.
    let (mut a, mut b) = (lo, hi);
    let mut y = 0.5 * (a + b);
    for _ in 0..200 {
        let (t, scale) = tangency_eq(p, yl, hl, y);
        if t.abs() <= 1e-14 * scale {
            break;
        }
        if t > 0.0 {
            a = y;
        } else {
            b = y;
        }
        let dt = p.d2h_y(y) * (y - yl);
        let newton = y - t / dt;
        y = if dt < 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if b - a <= 1e-15 * b {
            break;
        }
    }
    Ok(y)
}

/// Relative residual of the tangency condition at `r_s`.
pub fn tangency_residual_at(p: &GbmAppParams, s: f64, r_s: f64) -> f64 {
    let yl = p.f(p.beta * s);
    let (t, scale) = tangency_eq(p, yl, p.h_y(yl), r_s);
    t.abs() / scale
}

/// Closed-form region map with the case-boundary levels.
#[derive(Debug, Clone)]
pub struct RegionMap {
    pub surface: ValueSurface,
    pub cases: Vec<GbmCase>,
    /// `F^{-1}(u)`.
    pub s_chord_upper: f64,
    /// `F^{-1}(r)/beta`.
    pub s_concave_lower: f64,
}

pub fn region_map(p: &GbmAppParams, x_grid: &[f64], s_grid: &[f64]) -> Result<RegionMap> {
    let mut values = Vec::with_capacity(s_grid.len());
    let mut region = Vec::with_capacity(s_grid.len());
    let mut rows = Vec::with_capacity(s_grid.len());
    let mut cases = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let info = classify_case(p, s)?;
        let xl = p.beta * s;
        let slack = 1e-12 * s.max(1.0);
        let vss = vss_closed_form(p, s)?;
        let mut vrow = Vec::with_capacity(x_grid.len());
        let mut rrow = Vec::with_capacity(x_grid.len());
        for &x in x_grid {
            if x < xl - slack || x > s + slack || x <= 0.0 {
                vrow.push(f64::NAN);
                rrow.push(Region::Infeasible);
                continue;
            }
            let x = x.clamp(xl, s);
            let y = p.f(x);
            let hx = p.h_over_phi(x);
            let w = if x == s {
                vss / p.fp.phi(s)
            } else {
                match info.descriptor {
                    WDescriptor::Chord { y_left, w_left, slope } => w_left + slope * (y - y_left),
                    WDescriptor::Tangent { y_left, w_left, slope, r_s } => {
                        if y >= r_s {
                            hx
                        } else {
                            w_left + slope * (y - y_left)
                        }
                    }
                    WDescriptor::Obstacle => hx,
                }
            };
            let w = if x == xl { hx } else { w.max(hx) };
            vrow.push(p.fp.phi(x) * w);
            rrow.push(if w - hx <= 1e-9 * (1.0 + hx.abs()) { Region::Stop } else { Region::Continue });
        }
        values.push(vrow);
        region.push(rrow);
        cases.push(info.case);
        let l_star = if s < p.s_switch { (1.0 - p.beta) * s } else { 0.0 };
        rows.push(RowInfo {
            s,
            vss: VssSolution {
                s,
                l_star,
                value: vss,
                gamma_slope: 0.0,
                method: VssMethod::Corollary1,
                boundary_binding: s < p.s_switch,
            },
            x_left: xl,
            r_s_x: match info.descriptor {
                WDescriptor::Tangent { r_s, .. } => Some(p.f_inv(r_s)),
                _ => None,
            },
            anchor_adjusted: false,
        });
    }
    Ok(RegionMap {
        surface: ValueSurface { x_grid: x_grid.to_vec(), s_grid: s_grid.to_vec(), values, region, rows },
        cases,
        s_chord_upper: p.s_chord_upper(),
        s_concave_lower: p.s_concave_lower(),
    })
}
