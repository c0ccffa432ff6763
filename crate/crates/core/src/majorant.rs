//! Smallest concave majorant of the transformed obstacle and the value surface.
//!
//! At a fixed running maximum `s` the stopping problem lives on
//! `[s - b(s), s]`. In the coordinate `y = F(x)` the obstacle is
//! `H(y) = h(F^{-1}(y), s) / phi(F^{-1}(y))`. The value is `phi(x) W(F(x))`,
//! where `W` is the least concave function above `H` that meets the
//! absorption payoff on the left and `V(s, s)/phi(s)` on the right.

use rayon::prelude::*;

use crate::diffusion::FundamentalPair;
use crate::error::{AnchorSide, Error, Result};
use crate::numeric::one_sided_diff;
use crate::reward::{BoundarySpec, RewardSpec};
use crate::vss::{self, VssMethod, VssSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Stop,
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Stop,
    Continue,
    Infeasible,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Stop => "STOP",
            Region::Continue => "CONTINUE",
            Region::Infeasible => "INFEASIBLE",
        }
    }
}

impl From<Label> for Region {
    fn from(l: Label) -> Self {
        match l {
            Label::Stop => Region::Stop,
            Label::Continue => Region::Continue,
        }
    }
}

/// Default sample count on each of the x- and y-uniform grids.
pub const DEFAULT_SAMPLES: usize = 1024;

const CONTACT_TOL: f64 = 1e-9;
const ANCHOR_TOL: f64 = 1e-8;
const KINK_TOL: f64 = 1e-3;

/// Sampled obstacle `H` on `[F(s - b(s)), F(s)]` with both anchors.
#[derive(Debug, Clone)]
pub struct Obstacle {
    pub s: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub h: Vec<f64>,
    /// Absorption payoff over `phi` at the left end, per the reward's convention.
    pub left_convention_value: f64,
    /// `(F(s - b(s)), max(convention value, H))`: stopping on the boundary is
    /// always feasible, so the left end is worth at least the obstacle.
    pub left_anchor: (f64, f64),
    pub right_anchor: (f64, f64),
    fp: FundamentalPair,
    reward: RewardSpec,
}

impl Obstacle {
    pub fn x_left(&self) -> f64 {
        self.x[0]
    }

    fn h_at_y(&self, y: f64) -> (f64, f64) {
        let x = self.fp.f_inv(y).clamp(self.x[0], self.s);
        (x, self.reward.h(x, self.s) / self.fp.phi(x))
    }
}

/// Left end of the excursion interval, pulled inside the state space when
/// the boundary reaches its floor.
pub fn excursion_left(fp: &FundamentalPair, s: f64, b: f64) -> f64 {
    let ss = fp.state_space();
    let xl = s - b;
    if xl > ss.lo {
        xl
    } else if ss.lo.is_finite() {
        ss.lo + 1e-9 * (s - ss.lo)
    } else {
        fp.f_inv(fp.f(s) * 1e-15)
    }
}

/// Sample `H` on at least `2 n` points (uniform in `x` merged with uniform in
/// `y`), densifying 4x around detected kinks of the reward.
pub fn build_obstacle(
    fp: &FundamentalPair,
    reward: &RewardSpec,
    s: f64,
    boundary: &BoundarySpec,
    vss_value: f64,
    n: usize,
) -> Result<Obstacle> {
    let ss = fp.state_space();
    ss.check(s)?;
    let b = boundary.b(s);
    let xl = excursion_left(fp, s, b);
    let (yl, ys) = (fp.f(xl), fp.f(s));
    let width = ys - yl;
    if !(b > 0.0) || !(width > 1e-12 * ys.abs().max(yl.abs()).max(1e-300)) {
        return Err(Error::DegenerateInterval(width));
    }
    let n = n.max(DEFAULT_SAMPLES / 2).max(2);
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(2 * n + 2);
    for i in 0..=n {
        let x = if i == n { s } else { xl + (s - xl) * i as f64 / n as f64 };
        pts.push((fp.f(x), x));
    }
    for i in 1..n {
        let y = yl + width * i as f64 / n as f64;
        let x = fp.f_inv(y);
        if x > xl && x < s {
            pts.push((y, x));
        }
    }
    pts[0] = (yl, xl);
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gap = 1e-13 * width;
    pts.dedup_by(|b, a| (b.0 - a.0).abs() <= gap);
    if let Some(last) = pts.last_mut() {
        *last = (ys, s);
    }

    let g = |x: f64| reward.h(x, s) / fp.phi(x);
    let extra = kink_points(fp, &g, &pts);
    if !extra.is_empty() {
        pts.extend(extra);
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|b, a| (b.0 - a.0).abs() <= gap);
    }

    let x: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let h: Vec<f64> = x.iter().map(|&xi| g(xi)).collect();
    let left_convention_value = reward.absorption_value(xl, s) / fp.phi(xl);
    let left = if left_convention_value.is_finite() { left_convention_value.max(h[0]) } else { h[0] };
    Ok(Obstacle {
        s,
        left_convention_value,
        left_anchor: (yl, left),
        right_anchor: (ys, vss_value / fp.phi(s)),
        x,
        y,
        h,
        fp: fp.clone(),
        reward: reward.clone(),
    })
}

/// Extra sample points around slope discontinuities of `g = h/phi`.
fn kink_points<G: Fn(f64) -> f64>(fp: &FundamentalPair, g: &G, pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let m = pts.len();
    if m < 4 {
        return Vec::new();
    }
    let mut left = vec![0.0; m];
    let mut right = vec![0.0; m];
    for i in 0..m {
        let x = pts[i].1;
        let dfx = fp.df(x);
        if i > 0 {
            let h = 0.25 * (x - pts[i - 1].1);
            left[i] = one_sided_diff(g, x, -h) / dfx;
        }
        if i + 1 < m {
            let h = 0.25 * (pts[i + 1].1 - x);
            right[i] = one_sided_diff(g, x, h) / dfx;
        }
    }
    left[0] = right[0];
    right[m - 1] = left[m - 1];
    let mut flagged = vec![false; m - 1];
    let jump: Vec<f64> = (0..m - 1).map(|i| (left[i + 1] - right[i]).abs()).collect();
    for i in 1..m - 1 {
        if (right[i] - left[i]).abs() > KINK_TOL * (1.0 + right[i].abs()) {
            flagged[i - 1] = true;
            flagged[i] = true;
        }
    }
    for i in 0..m - 1 {
        let neighbours = jump.get(i.wrapping_sub(1)).copied().unwrap_or(0.0).max(jump.get(i + 1).copied().unwrap_or(0.0));
        if jump[i] > KINK_TOL * (1.0 + right[i].abs()) && jump[i] > 4.0 * neighbours {
            for k in i.saturating_sub(1)..=(i + 1).min(m - 2) {
                flagged[k] = true;
            }
        }
    }
    let mut out = Vec::new();
    for (i, &f) in flagged.iter().enumerate() {
        if f {
            let (xa, xb) = (pts[i].1, pts[i + 1].1);
            for k in 1..4 {
                let x = xa + (xb - xa) * k as f64 / 4.0;
                out.push((fp.f(x), x));
            }
        }
    }
    out
}

/// Upper hull (monotone chain) of points sorted by abscissa; returns vertex
/// indices from left to right. Collinear points are dropped.
pub fn upper_hull(y: &[f64], v: &[f64]) -> Vec<usize> {
    let n = y.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let (y0, y1) = (y[0], y[n - 1]);
    let (vmin, vmax) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &t| (a.0.min(t), a.1.max(t)));
    let ys = 1.0 / (y1 - y0);
    let vs = if vmax > vmin { 1.0 / (vmax - vmin) } else { 1.0 };
    let p = |i: usize| ((y[i] - y0) * ys, (v[i] - vmin) * vs);
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while hull.len() >= 2 {
            let a = p(hull[hull.len() - 2]);
            let b = p(hull[hull.len() - 1]);
            let c = p(i);
            let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Concave majorant `W` on the obstacle samples, with stop/continue labels.
#[derive(Debug, Clone)]
pub struct MajorantResult {
    pub s: f64,
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub h: Vec<f64>,
    pub w: Vec<f64>,
    pub left_anchor: (f64, f64),
    pub right_anchor: (f64, f64),
    pub left_convention_value: f64,
    /// Smallest interior contact point `W = H`, in `y`.
    pub r_s: Option<f64>,
    /// True when a continuation stretch lies immediately left of `r_s`.
    pub r_s_after_chord: bool,
    pub labels: Vec<Label>,
    /// Indices of the hull vertices into the grids.
    pub hull: Vec<usize>,
    fp: FundamentalPair,
    reward: RewardSpec,
}

fn contact(w: f64, h: f64) -> bool {
    w - h <= CONTACT_TOL * (1.0 + h.abs())
}

pub fn smallest_concave_majorant(obs: &Obstacle) -> Result<MajorantResult> {
    let n = obs.y.len();
    let h_last = obs.h[n - 1];
    let ra = obs.right_anchor.1;
    if h_last - ra > ANCHOR_TOL * (1.0 + h_last.abs()) || !ra.is_finite() {
        return Err(Error::AnchorBelowObstacle { side: AnchorSide::Right, anchor: ra, obstacle: h_last });
    }
    let mut y = obs.y.clone();
    let mut x = obs.x.clone();
    let mut h = obs.h.clone();
    let anchored = |h: &[f64]| {
        let mut v = h.to_vec();
        v[0] = obs.left_anchor.1;
        let k = v.len() - 1;
        v[k] = ra;
        v
    };

    let v = anchored(&h);
    let hull = upper_hull(&y, &v);
    let extra = refine_tangencies(obs, &y, &v, &hull);
    let hull = if extra.is_empty() {
        hull
    } else {
        let mut pts: Vec<(f64, f64, f64)> = (0..n).map(|i| (y[i], x[i], h[i])).collect();
        pts.extend(extra);
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|b, a| b.0 == a.0);
        y = pts.iter().map(|p| p.0).collect();
        x = pts.iter().map(|p| p.1).collect();
        h = pts.iter().map(|p| p.2).collect();
        upper_hull(&y, &anchored(&h))
    };
    let v = anchored(&h);

    let mut w = vec![0.0; y.len()];
    for e in hull.windows(2) {
        let (i, j) = (e[0], e[1]);
        w[i] = v[i];
        w[j] = v[j];
        let slope = (v[j] - v[i]) / (y[j] - y[i]);
        for k in i + 1..j {
            w[k] = v[i] + slope * (y[k] - y[i]);
        }
    }
    let last = y.len() - 1;
    let labels: Vec<Label> = (0..y.len())
        .map(|k| if contact(w[k], h[k]) { Label::Stop } else { Label::Continue })
        .collect();
    // The first interior hull vertex is the exact contact point; label
    // tolerance alone would pull it left along a near-tangent chord.
    let r_idx = hull.iter().copied().find(|&k| k > 0 && k < last && labels[k] == Label::Stop);
    Ok(MajorantResult {
        s: obs.s,
        r_s: r_idx.map(|k| y[k]),
        r_s_after_chord: r_idx.is_some_and(|k| {
            let hi = hull.iter().position(|&i| i == k).unwrap_or(0);
            hi > 0 && hull[hi - 1] + 1 < k && labels[hull[hi - 1] + 1..k].contains(&Label::Continue)
        }),
        x_grid: x,
        y_grid: y,
        h,
        w,
        left_anchor: obs.left_anchor,
        right_anchor: obs.right_anchor,
        left_convention_value: obs.left_convention_value,
        labels,
        hull,
        fp: obs.fp.clone(),
        reward: obs.reward.clone(),
    })
}

/// For every hull chord spanning several cells whose end is an obstacle
/// sample, locate the exact tangency point within the neighbouring cells.
fn refine_tangencies(obs: &Obstacle, y: &[f64], v: &[f64], hull: &[usize]) -> Vec<(f64, f64, f64)> {
    let last = y.len() - 1;
    let mut out = Vec::new();
    for e in hull.windows(2) {
        let (i, j) = (e[0], e[1]);
        if j <= i + 1 {
            continue;
        }
        if j < last {
            // Tangent from (y_i, v_i) touches H where the slope to it is largest.
            let slope = |t: f64| (obs.h_at_y(t).1 - v[i]) / (t - y[i]);
            if let Some(p) = golden_max(slope, y[j - 1].max(y[i] + 1e-15 * (y[j] - y[i])), y[j + 1]) {
                let (xx, hh) = obs.h_at_y(p);
                out.push((p, xx, hh));
            }
        }
        if i > 0 {
            let slope = |t: f64| -(v[j] - obs.h_at_y(t).1) / (y[j] - t);
            if let Some(p) = golden_max(slope, y[i - 1], y[i + 1].min(y[j] - 1e-15 * (y[j] - y[i]))) {
                let (xx, hh) = obs.h_at_y(p);
                out.push((p, xx, hh));
            }
        }
    }
    out
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> Option<f64> {
    if !(b > a) {
        return None;
    }
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        if b - a <= 4.0 * f64::EPSILON * b.abs().max(a.abs()) {
            break;
        }
    }
    let m = 0.5 * (a + b);
    f(m).is_finite().then_some(m)
}

impl MajorantResult {
    pub fn x_left(&self) -> f64 {
        self.x_grid[0]
    }

    /// Tangency point in state coordinates.
    pub fn r_s_x(&self) -> Option<f64> {
        self.r_s.map(|y| self.fp.f_inv(y))
    }

    /// `(W(y), H(y))` at an arbitrary `y` in the grid range.
    pub fn w_at_y(&self, y: f64) -> (f64, f64) {
        let n = self.y_grid.len();
        let y = y.clamp(self.y_grid[0], self.y_grid[n - 1]);
        let x = self.fp.f_inv(y).clamp(self.x_grid[0], self.s);
        let hx = self.reward.h(x, self.s) / self.fp.phi(x);
        let k = self.hull.partition_point(|&i| self.y_grid[i] <= y).clamp(1, self.hull.len() - 1);
        let (i, j) = (self.hull[k - 1], self.hull[k]);
        let (wi, wj) = (self.w[i], self.w[j]);
        if y == self.y_grid[i] {
            return (wi, hx);
        }
        if y == self.y_grid[j] {
            return (wj, hx);
        }
        let lin = wi + (wj - wi) * (y - self.y_grid[i]) / (self.y_grid[j] - self.y_grid[i]);
        if j == i + 1 {
            (lin.max(hx), hx)
        } else {
            (lin, hx)
        }
    }

    /// One-sided slopes of `W` at the tangency point: chord on the left,
    /// obstacle derivative on the right.
    pub fn smooth_fit_slopes(&self) -> Option<(f64, f64)> {
        let r = self.r_s?;
        let k = self.y_grid.iter().position(|&y| y == r)?;
        let hi = self.hull.iter().position(|&i| i == k)?;
        if hi == 0 {
            return None;
        }
        let p = self.hull[hi - 1];
        let left = (self.w[k] - self.w[p]) / (self.y_grid[k] - self.y_grid[p]);
        let x = self.x_grid[k];
        let g = |t: f64| self.reward.h(t, self.s) / self.fp.phi(t);
        let step = 1e-4 * (self.s - x).max(1e-12).min(x - self.x_grid[0]);
        let right = one_sided_diff(g, x, step) / self.fp.df(x);
        Some((left, right))
    }
}

/// Outcome of [`MajorantResult::verify_conditions`]; each flag is one of the
/// defining properties of the majorant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub dominates: bool,
    pub right_anchor: bool,
    pub left_anchor: bool,
    pub concave: bool,
    pub minimal: bool,
    /// Largest relative gap to the independently computed envelope.
    pub minimal_gap: f64,
}

impl ConditionReport {
    pub fn all(&self) -> bool {
        self.dominates && self.right_anchor && self.left_anchor && self.concave && self.minimal
    }
}

/// Upper envelope by gift wrapping: from each vertex take the point with the
/// steepest slope to its right (farthest on ties).
pub fn upper_envelope_gift_wrap(y: &[f64], v: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    let mut i = 0;
    out[0] = v[0];
    while i + 1 < n {
        let mut best = i + 1;
        let mut best_slope = (v[best] - v[i]) / (y[best] - y[i]);
        for k in i + 2..n {
            let sl = (v[k] - v[i]) / (y[k] - y[i]);
            if sl >= best_slope {
                best_slope = sl;
                best = k;
            }
        }
        for k in i + 1..=best {
            out[k] = if k == best { v[best] } else { v[i] + best_slope * (y[k] - y[i]) };
        }
        i = best;
    }
    out
}

impl MajorantResult {
    pub fn verify_conditions(&self) -> ConditionReport {
        let n = self.y_grid.len();
        let (y, w, h) = (&self.y_grid, &self.w, &self.h);
        let dominates = (0..n).all(|k| w[k] >= h[k] - 1e-12 * (1.0 + h[k].abs()));
        let right_anchor = w[n - 1] == self.right_anchor.1;
        let left_anchor = w[0] == self.left_anchor.1;
        let concave = (1..n - 1).all(|k| {
            let (a, b) = (y[k] - y[k - 1], y[k + 1] - y[k]);
            let interp = (b * w[k - 1] + a * w[k + 1]) / (a + b);
            w[k] >= interp - 1e-10 * (1.0 + w[k].abs())
        });
        let mut v = h.clone();
        v[0] = self.left_anchor.1;
        v[n - 1] = self.right_anchor.1;
        let env = upper_envelope_gift_wrap(y, &v);
        let minimal_gap = (0..n).map(|k| (w[k] - env[k]).abs() / (1.0 + env[k].abs())).fold(0.0, f64::max);
        ConditionReport { dominates, right_anchor, left_anchor, concave, minimal: minimal_gap <= 1e-10, minimal_gap }
    }
}

/// `V(x, s) = phi(x) W(F(x))` with its stop/continue label.
pub fn value_at(maj: &MajorantResult, fp: &FundamentalPair, x: f64) -> Result<(f64, Label)> {
    let (lo, hi) = (maj.x_left(), maj.s);
    let slack = 1e-12 * hi.abs().max(1.0);
    if !(x >= lo - slack && x <= hi + slack) {
        return Err(Error::OutOfExcursionRange { x, lo, hi });
    }
    let x = x.clamp(lo, hi);
    let (w, h) = if x == lo {
        (maj.w[0], maj.h[0])
    } else if x == hi {
        (maj.w[maj.w.len() - 1], maj.h[maj.h.len() - 1])
    } else {
        maj.w_at_y(fp.f(x))
    };
    let label = if contact(w, h) { Label::Stop } else { Label::Continue };
    Ok((fp.phi(x) * w, label))
}

/// Per-row diagnostics of a [`ValueSurface`].
#[derive(Debug, Clone)]
pub struct RowInfo {
    pub s: f64,
    pub vss: VssSolution,
    pub x_left: f64,
    pub r_s_x: Option<f64>,
    /// The solver's `V(s, s)` fell below `h(s, s)` and was raised to it.
    pub anchor_adjusted: bool,
}

/// Values and regions on an `(x, s)` grid; `values[j][i]` is at `(x_grid[i], s_grid[j])`.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    pub x_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub region: Vec<Vec<Region>>,
    pub rows: Vec<RowInfo>,
}

#[derive(Debug, Clone, Copy)]
pub struct SurfaceOptions {
    pub method: VssMethod,
    pub samples: usize,
}

impl SurfaceOptions {
    /// Corollary 1 for s-independent rewards, Proposition 2 otherwise.
    pub fn for_reward(reward: &RewardSpec) -> Self {
        Self {
            method: if reward.s_dependent { VssMethod::Prop2 } else { VssMethod::Corollary1 },
            samples: DEFAULT_SAMPLES,
        }
    }
}

/// Solve one row: diagonal value, obstacle, majorant.
pub fn solve_row(
    fp: &FundamentalPair,
    reward: &RewardSpec,
    boundary: &BoundarySpec,
    s: f64,
    opts: SurfaceOptions,
) -> Result<(VssSolution, Option<MajorantResult>, bool)> {
    let b = boundary.b(s);
    if !(b > 0.0) {
        let sol = vss::solve(fp, reward, s, 0.0, opts.method)?;
        return Ok((sol, None, false));
    }
    let mut sol = vss::solve(fp, reward, s, b, opts.method)?;
    let floor = reward.h(s, s);
    let adjusted = sol.value < floor;
    if adjusted {
        sol.value = floor;
    }
    let obs = match build_obstacle(fp, reward, s, boundary, sol.value, opts.samples) {
        Ok(o) => o,
        Err(Error::DegenerateInterval(_)) => return Ok((sol, None, adjusted)),
        Err(e) => return Err(e),
    };
    let maj = smallest_concave_majorant(&obs)?;
    Ok((sol, Some(maj), adjusted))
}

pub fn build_surface(
    fp: &FundamentalPair,
    reward: &RewardSpec,
    boundary: &BoundarySpec,
    x_grid: &[f64],
    s_grid: &[f64],
    opts: SurfaceOptions,
) -> Result<ValueSurface> {
    if !s_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter("s grid must be strictly increasing".into()));
    }
    let rows: Vec<(Vec<f64>, Vec<Region>, RowInfo)> = s_grid
        .par_iter()
        .enumerate()
        .map(|(index, &s)| {
            surface_row(fp, reward, boundary, x_grid, s, opts).map_err(|e| Error::Row { index, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(rows.len());
    let mut region = Vec::with_capacity(rows.len());
    let mut info = Vec::with_capacity(rows.len());
    for (v, r, i) in rows {
        values.push(v);
        region.push(r);
        info.push(i);
    }
    Ok(ValueSurface { x_grid: x_grid.to_vec(), s_grid: s_grid.to_vec(), values, region, rows: info })
}

fn surface_row(
    fp: &FundamentalPair,
    reward: &RewardSpec,
    boundary: &BoundarySpec,
    x_grid: &[f64],
    s: f64,
    opts: SurfaceOptions,
) -> Result<(Vec<f64>, Vec<Region>, RowInfo)> {
    let (sol, maj, adjusted) = solve_row(fp, reward, boundary, s, opts)?;
    let slack = 1e-12 * s.abs().max(1.0);
    let mut vals = Vec::with_capacity(x_grid.len());
    let mut regs = Vec::with_capacity(x_grid.len());
    match &maj {
        None => {
            for &x in x_grid {
                if (x - s).abs() <= slack {
                    vals.push(sol.value);
                    regs.push(Region::Stop);
                } else {
                    vals.push(f64::NAN);
                    regs.push(Region::Infeasible);
                }
            }
        }
        Some(m) => {
            let lo = m.x_left();
            for &x in x_grid {
                if x < lo - slack || x > s + slack {
                    vals.push(f64::NAN);
                    regs.push(Region::Infeasible);
                } else {
                    let (v, l) = value_at(m, fp, x)?;
                    vals.push(v);
                    regs.push(l.into());
                }
            }
        }
    }
    let info = RowInfo {
        s,
        x_left: maj.as_ref().map_or(s, |m| m.x_left()),
        r_s_x: maj.as_ref().and_then(|m| m.r_s_x()),
        vss: sol,
        anchor_adjusted: adjusted,
    };
    Ok((vals, regs, info))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_convex_points_is_endpoints() {
        let y = [0.0, 1.0, 2.0, 3.0];
        let v = [0.0, -1.0, -1.0, 0.0];
        assert_eq!(upper_hull(&y, &v), vec![0, 3]);
    }

    #[test]
    fn hull_keeps_concave_points() {
        let y = [0.0, 1.0, 2.0, 3.0];
        let v = [0.0, 2.0, 3.0, 3.5];
        assert_eq!(upper_hull(&y, &v), vec![0, 1, 2, 3]);
    }

    #[test]
    fn golden_max_finds_peak() {
        let p = golden_max(|t| -(t - 0.25).powi(2), 0.0, 1.0).unwrap();
        assert!((p - 0.25).abs() < 1e-7);
    }
}
