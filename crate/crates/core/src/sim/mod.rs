//! Monte Carlo execution of excursion policies and a lattice dynamic
//! programming oracle.
//!
//! Every path draws from its own ChaCha8 stream keyed by the path index, and
//! per-path outcomes are reduced in index order, so results depend only on
//! `(seed, n_paths)` and never on the worker count.

mod lattice;

pub use lattice::{lattice_dp, max_stable_dt, LatticeDPResult};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diffusion::{hitting_laplace, DiffusionModel, FundamentalPair, ModelKind};
use crate::reward::{BivariateFn, BoundarySpec, FbarSource, Policy, RewardSpec};
use crate::{Error, Result};

/// Time stepping used for the state process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Exact increments: lognormal for GBM, Gaussian for ABM.
    ExactGbm,
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub antithetic: bool,
    /// Brownian-bridge correction for barrier crossings and the running
    /// maximum inside each step.
    pub bridge: bool,
    /// Worker cap; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-3,
            t_max: 100.0,
            seed: 0,
            scheme: Scheme::ExactGbm,
            antithetic: false,
            bridge: true,
            threads: None,
        }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::NonpositiveDt(self.dt));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
        }
        if !(self.t_max >= self.dt) {
            return Err(Error::InvalidParameter(format!("t_max={} is shorter than dt={}", self.t_max, self.dt)));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(Error::InvalidParameter("antithetic sampling needs an even n_paths".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidParameter("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCResult {
    pub estimate: f64,
    pub stderr: f64,
    pub n_absorbed: usize,
    pub n_stopped: usize,
    pub n_censored: usize,
    /// Set when `exp(-q t_max) > 1e-6`, i.e. censoring may bias the estimate.
    pub discount_bias_note: bool,
}

impl MCResult {
    pub fn z_score(&self, exact: f64) -> f64 {
        if self.stderr == 0.0 {
            if self.estimate == exact {
                0.0
            } else {
                f64::INFINITY.copysign(self.estimate - exact)
            }
        } else {
            (self.estimate - exact) / self.stderr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Stopped,
    Absorbed,
    Censored,
}

#[derive(Debug, Clone, Copy)]
struct PathResult {
    payoff: f64,
    outcome: Outcome,
}

/// Per-step law of the working coordinate `u` (log-price for exact GBM,
/// the state itself otherwise).
#[derive(Clone, Copy)]
enum Coord {
    Log { drift: f64, sd: f64 },
    Linear { drift: f64, sd: f64 },
    Euler,
}

struct Stepper<'a> {
    model: &'a DiffusionModel,
    coord: Coord,
    dt: f64,
    sqdt: f64,
    lo: f64,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a DiffusionModel, cfg: &MCConfig) -> Result<Self> {
        let dt = cfg.dt;
        let coord = match (cfg.scheme, model.kind(), model.params()) {
            (Scheme::ExactGbm, ModelKind::Gbm, Some((mu, sigma))) => {
                Coord::Log { drift: (mu - 0.5 * sigma * sigma) * dt, sd: sigma * dt.sqrt() }
            }
            (Scheme::ExactGbm, ModelKind::Abm, Some((mu, sigma))) => {
                Coord::Linear { drift: mu * dt, sd: sigma * dt.sqrt() }
            }
            (Scheme::ExactGbm, _, _) => {
                return Err(Error::InvalidParameter("exact stepping needs a GBM or ABM model".into()));
            }
            (Scheme::EulerMaruyama, _, _) => Coord::Euler,
        };
        Ok(Self { model, coord, dt, sqdt: dt.sqrt(), lo: model.state_space().lo })
    }

    fn to_u(&self, x: f64) -> f64 {
        match self.coord {
            Coord::Log { .. } => x.ln(),
            _ => x,
        }
    }

    fn to_x(&self, u: f64) -> f64 {
        match self.coord {
            Coord::Log { .. } => u.exp(),
            _ => u,
        }
    }

    /// Next coordinate and the bridge variance of the step.
    fn step(&self, u: f64, z: f64) -> (f64, f64) {
        match self.coord {
            Coord::Log { drift, sd } | Coord::Linear { drift, sd } => (u + drift + sd * z, sd * sd),
            Coord::Euler => {
                let s = self.model.vol(u);
                (u + self.model.drift(u) * self.dt + s * self.sqdt * z, s * s * self.dt)
            }
        }
    }

    /// True when the working coordinate is the state itself.
    fn lin(&self) -> bool {
        !matches!(self.coord, Coord::Log { .. })
    }

    /// Working coordinate of a level, `None` when it lies outside the state space.
    fn level(&self, x: f64) -> Option<f64> {
        if x <= self.lo {
            None
        } else {
            Some(self.to_u(x))
        }
    }
}

/// Lower barrier in force while the maximum stays at `s`.
#[derive(Clone, Copy)]
struct Barrier {
    /// Working coordinate; `-inf` when the level is outside the state space.
    c: f64,
    x: f64,
    s: f64,
    outcome: Outcome,
}

/// Probability that a bridge from `a` to `b` with variance `v` touches `c`,
/// where `c` lies on the same side of both ends.
fn bridge_touch(a: f64, b: f64, c: f64, v: f64) -> f64 {
    let e = 2.0 * (a - c) * (b - c) / v;
    if e > 40.0 {
        0.0
    } else {
        (-e).exp()
    }
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Random sources for one path: a normal stream (shared and mirrored within
/// an antithetic pair) and a private uniform stream.
struct PathRng {
    normals: ChaCha8Rng,
    uniforms: ChaCha8Rng,
    sign: f64,
}

impl PathRng {
    fn new(seed: u64, index: usize, antithetic: bool) -> Self {
        let (base, sign) = if antithetic { (index - index % 2, if index % 2 == 1 { -1.0 } else { 1.0 }) } else { (index, 1.0) };
        let mut normals = ChaCha8Rng::seed_from_u64(seed);
        normals.set_stream(2 * base as u64);
        let mut uniforms = ChaCha8Rng::seed_from_u64(seed);
        uniforms.set_stream(2 * index as u64 + 1);
        Self { normals, uniforms, sign }
    }

    fn normal(&mut self) -> f64 {
        let z: f64 = self.normals.sample(StandardNormal);
        self.sign * z
    }

    fn uniform(&mut self) -> f64 {
        open_unit(&mut self.uniforms)
    }
}

/// Sample the running maximum over a step given the current maximum `s_u`
/// (working coordinate) and the endpoints.
fn step_max(rng: &mut PathRng, a: f64, b: f64, s_u: f64, v: f64, bridge: bool) -> f64 {
    let end = a.max(b);
    if !bridge || v <= 0.0 {
        return s_u.max(end);
    }
    if end >= s_u {
        let w = rng.uniform();
        return 0.5 * (a + b + ((b - a).powi(2) - 2.0 * v * w.ln()).sqrt());
    }
    let p = bridge_touch(a, b, s_u, v);
    if p == 0.0 {
        return s_u;
    }
    let w = rng.uniform();
    if w < p {
        0.5 * (a + b + ((b - a).powi(2) - 2.0 * v * w.ln()).sqrt())
    } else {
        s_u
    }
}

fn run_paths<F>(cfg: &MCConfig, path: F) -> Result<Vec<PathResult>>
where
    F: Fn(usize) -> PathResult + Send + Sync,
{
    let go = || (0..cfg.n_paths).into_par_iter().map(&path).collect::<Vec<_>>();
    match cfg.threads {
        None => Ok(go()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(go))
        }
    }
}

/// Sequential reduction; antithetic pairs are averaged before the variance.
fn reduce(results: &[PathResult], cfg: &MCConfig, q: f64) -> MCResult {
    let unit = if cfg.antithetic { 2 } else { 1 };
    let n_units = results.len() / unit;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for chunk in results.chunks(unit) {
        let v = chunk.iter().map(|r| r.payoff).sum::<f64>() / unit as f64;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n_units as f64;
    let stderr = if n_units > 1 {
        let var = ((sum_sq - n_units as f64 * mean * mean) / (n_units as f64 - 1.0)).max(0.0);
        (var / n_units as f64).sqrt()
    } else {
        0.0
    };
    let count = |o: Outcome| results.iter().filter(|r| r.outcome == o).count();
    MCResult {
        estimate: mean,
        stderr,
        n_absorbed: count(Outcome::Absorbed),
        n_stopped: count(Outcome::Stopped),
        n_censored: count(Outcome::Censored),
        discount_bias_note: (-q * cfg.t_max).exp() > 1e-6,
    }
}

/// Exact discounted trapezoid: `int_t^{t+d} e^{-q r} dr * (f0 + f1) / 2`.
fn income_step(q: f64, t: f64, d: f64, f0: f64, f1: f64) -> f64 {
    let w = if q == 0.0 { d } else { -(-q * d).exp_m1() / q };
    (-q * t).exp() * w * 0.5 * (f0 + f1)
}

/// Run `policy` from `(x0, s0)`: income accrues until the path stops
/// (drawdown at least `l(S)`), is absorbed (drawdown beyond `b(S)`), or is
/// censored at `t_max`. A stop pays `g` at the stopping level, absorption
/// pays according to the reward's convention.
pub fn simulate_policy(
    model: &DiffusionModel,
    reward: &RewardSpec,
    boundary: &BoundarySpec,
    policy: &Policy,
    x0: f64,
    s0: f64,
    cfg: &MCConfig,
) -> Result<MCResult> {
    cfg.validate()?;
    let ss = model.state_space();
    ss.check(x0)?;
    if s0 < x0 {
        return Err(Error::InvalidParameter(format!("need s0 >= x0, got x0={x0}, s0={s0}")));
    }
    let b0 = boundary.b(s0);
    if s0 - x0 > b0 {
        return Err(Error::AlreadyAbsorbed { x0, s0, b: b0 });
    }
    policy.validate(boundary, &[s0])?;
    let q = model.q();
    if s0 - x0 >= policy.l(s0) {
        let n = cfg.n_paths;
        return Ok(MCResult {
            estimate: (reward.g)(x0, s0),
            stderr: 0.0,
            n_absorbed: 0,
            n_stopped: n,
            n_censored: 0,
            discount_bias_note: false,
        });
    }
    let stepper = Stepper::new(model, cfg)?;
    let n_steps = (cfg.t_max / cfg.dt).round().max(1.0) as usize;
    let has_income = reward.fbar_source != FbarSource::Zero;
    let step_disc = (-q * cfg.dt).exp();
    let w_full = if q == 0.0 { cfg.dt } else { -(-q * cfg.dt).exp_m1() / q };
    // Effective lower barrier at maximum `s`: the higher of the stopping and
    // absorption levels, with ties going to the closed stopping set.
    let barrier = |s: f64| -> Barrier {
        let stop_x = s - policy.l(s);
        let abs_x = s - boundary.b(s);
        let (x, outcome) = if stop_x >= abs_x { (stop_x, Outcome::Stopped) } else { (abs_x, Outcome::Absorbed) };
        Barrier { c: stepper.level(x).unwrap_or(f64::NEG_INFINITY), x: x.max(stepper.lo), s, outcome }
    };
    let path = |index: usize| {
        let mut rng = PathRng::new(cfg.seed, index, cfg.antithetic);
        let mut u = stepper.to_u(x0);
        let mut s_u = stepper.to_u(s0);
        let mut bar = barrier(s0);
        let mut fx = (reward.f)(x0, s0);
        let mut acc = 0.0;
        let mut disc = 1.0;
        for k in 0..n_steps {
            let (u1, v) = stepper.step(u, rng.normal());
            let dead = !u1.is_finite() || (stepper.lin() && u1 <= stepper.lo);
            let mut hit = dead
                || u1 <= bar.c
                || (cfg.bridge && v > 0.0 && {
                    let p = bridge_touch(u, u1, bar.c, v);
                    p > 0.0 && rng.uniform() < p
                });
            if !hit {
                let new_s_u = step_max(&mut rng, u, u1, s_u, v, cfg.bridge);
                if new_s_u > s_u {
                    s_u = new_s_u;
                    bar = barrier(stepper.to_x(s_u).max(bar.s));
                    hit = u1 <= bar.c;
                }
            }
            if hit {
                let t = k as f64 * cfg.dt;
                if has_income {
                    acc += income_step(q, t, 0.5 * cfg.dt, fx, (reward.f)(bar.x, bar.s));
                }
                let pay = match bar.outcome {
                    Outcome::Stopped => (reward.g)(bar.x, bar.s),
                    _ => reward.absorption_payoff(bar.x, bar.s),
                };
                acc += (-q * (t + 0.5 * cfg.dt)).exp() * pay;
                return PathResult { payoff: acc, outcome: bar.outcome };
            }
            if has_income {
                let f1 = (reward.f)(stepper.to_x(u1), bar.s);
                acc += disc * w_full * 0.5 * (fx + f1);
                fx = f1;
            }
            disc *= step_disc;
            u = u1;
        }
        PathResult { payoff: acc, outcome: Outcome::Censored }
    };
    let results = run_paths(cfg, path)?;
    Ok(reduce(&results, cfg, q))
}

/// Monte Carlo q-potential of the running income `f` from `(x0, s0)`,
/// integrated up to `t_max` without stopping or absorption. Returns
/// `(estimate, stderr)`.
pub fn estimate_fbar(model: &DiffusionModel, f: &BivariateFn, x0: f64, s0: f64, cfg: &MCConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    model.state_space().check(x0)?;
    let q = model.q();
    let stepper = Stepper::new(model, cfg)?;
    let n_steps = (cfg.t_max / cfg.dt).round().max(1.0) as usize;
    let path = |index: usize| {
        let mut rng = PathRng::new(cfg.seed, index, cfg.antithetic);
        let mut u = stepper.to_u(x0);
        let mut s_u = stepper.to_u(s0.max(x0));
        let mut fx = f(x0, s0.max(x0));
        let mut acc = 0.0;
        for k in 0..n_steps {
            let (u1, v) = stepper.step(u, rng.normal());
            s_u = step_max(&mut rng, u, u1, s_u, v, cfg.bridge);
            let x1 = stepper.to_x(u1);
            if !(x1 > stepper.lo) {
                break;
            }
            let f1 = f(x1, stepper.to_x(s_u));
            acc += income_step(q, k as f64 * cfg.dt, cfg.dt, fx, f1);
            u = u1;
            fx = f1;
        }
        PathResult { payoff: acc, outcome: Outcome::Censored }
    };
    let results = run_paths(cfg, path)?;
    let r = reduce(&results, cfg, q);
    Ok((r.estimate, r.stderr))
}

/// Monte Carlo estimate of `E[exp(-q T_m); T_m < tau]` where `T_m` is the
/// first time the running maximum reaches `m` and `tau` the stopping or
/// absorption time of `policy`. Starts on the diagonal at `s`.
pub fn estimate_discounted_level_reach(
    model: &DiffusionModel,
    boundary: &BoundarySpec,
    policy: &Policy,
    s: f64,
    m: f64,
    cfg: &MCConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !(m >= s) {
        return Err(Error::InvalidParameter(format!("need m >= s, got s={s}, m={m}")));
    }
    if m == s {
        return Ok((1.0, 0.0));
    }
    let q = model.q();
    let stepper = Stepper::new(model, cfg)?;
    let m_u = stepper.to_u(m);
    let n_steps = (cfg.t_max / cfg.dt).round().max(1.0) as usize;
    let path = |index: usize| {
        let mut rng = PathRng::new(cfg.seed, index, cfg.antithetic);
        let mut u = stepper.to_u(s);
        let mut sm = s;
        let mut s_u = u;
        for k in 0..n_steps {
            let t = k as f64 * cfg.dt;
            let lower = (sm - policy.l(sm)).max(sm - boundary.b(sm));
            let (u1, v) = stepper.step(u, rng.normal());
            let new_s_u = step_max(&mut rng, u, u1, s_u, v, cfg.bridge);
            if new_s_u >= m_u {
                return PathResult { payoff: (-q * (t + 0.5 * cfg.dt)).exp(), outcome: Outcome::Stopped };
            }
            let x1 = stepper.to_x(u1);
            let s1 = stepper.to_x(new_s_u).max(sm);
            let below = match stepper.level(lower) {
                None => !(x1 > stepper.lo),
                Some(c) => {
                    !(x1 > stepper.lo)
                        || u1 <= c
                        || (cfg.bridge && v > 0.0 && {
                            let p = bridge_touch(u, u1, c, v);
                            p > 0.0 && rng.uniform() < p
                        })
                }
            };
            if below || s1 - x1 >= policy.l(s1).min(boundary.b(s1)) {
                return PathResult { payoff: 0.0, outcome: Outcome::Absorbed };
            }
            u = u1;
            sm = s1;
            s_u = new_s_u.max(s_u);
        }
        PathResult { payoff: 0.0, outcome: Outcome::Censored }
    };
    let results = run_paths(cfg, path)?;
    let r = reduce(&results, cfg, q);
    Ok((r.estimate, r.stderr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HittingReport {
    pub x: f64,
    pub z: f64,
    pub exact: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub z_score: f64,
    pub pass: bool,
}

/// Compare a Monte Carlo estimate of `E_x[exp(-q T_z)]` with the closed form
/// from the fundamental pair; passes within three standard errors.
pub fn verify_hitting_identity(
    model: &DiffusionModel,
    fp: &FundamentalPair,
    x: f64,
    z: f64,
    cfg: &MCConfig,
) -> Result<HittingReport> {
    cfg.validate()?;
    let exact = hitting_laplace(fp, x, z)?;
    if x == z {
        return Ok(HittingReport { x, z, exact, estimate: 1.0, stderr: 0.0, z_score: 0.0, pass: exact == 1.0 });
    }
    let q = model.q();
    let stepper = Stepper::new(model, cfg)?;
    let target = stepper.to_u(z);
    let up = z > x;
    let n_steps = (cfg.t_max / cfg.dt).round().max(1.0) as usize;
    let path = |index: usize| {
        let mut rng = PathRng::new(cfg.seed, index, cfg.antithetic);
        let mut u = stepper.to_u(x);
        for k in 0..n_steps {
            let (u1, v) = stepper.step(u, rng.normal());
            let past = if up { u1 >= target } else { u1 <= target };
            let touched = past
                || (cfg.bridge && v > 0.0 && {
                    let p = bridge_touch(u, u1, target, v);
                    p > 0.0 && rng.uniform() < p
                });
            if touched {
                let t = (k as f64 + 0.5) * cfg.dt;
                return PathResult { payoff: (-q * t).exp(), outcome: Outcome::Stopped };
            }
            if !u1.is_finite() || !(stepper.to_x(u1) > stepper.lo) {
                break;
            }
            u = u1;
        }
        PathResult { payoff: 0.0, outcome: Outcome::Censored }
    };
    let results = run_paths(cfg, path)?;
    let r = reduce(&results, cfg, q);
    let z_score = r.z_score(exact);
    Ok(HittingReport { x, z, exact, estimate: r.estimate, stderr: r.stderr, z_score, pass: z_score.abs() <= 3.0 })
}

/// One uncontrolled path of `(X, S)` on the step grid, for inspection.
/// Stops early if the state leaves the state space.
pub fn sample_path(model: &DiffusionModel, x0: f64, s0: f64, n_steps: usize, cfg: &MCConfig, index: usize) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    model.state_space().check(x0)?;
    let stepper = Stepper::new(model, cfg)?;
    let mut rng = PathRng::new(cfg.seed, index, cfg.antithetic);
    let mut u = stepper.to_u(x0);
    let mut s_u = stepper.to_u(s0.max(x0));
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push((x0, s0.max(x0)));
    for _ in 0..n_steps {
        let (u1, v) = stepper.step(u, rng.normal());
        if !u1.is_finite() || (stepper.lin() && u1 <= stepper.lo) {
            break;
        }
        s_u = step_max(&mut rng, u, u1, s_u, v, cfg.bridge);
        u = u1;
        let s_prev = out.last().map_or(s0, |p| p.1);
        out.push((stepper.to_x(u), stepper.to_x(s_u).max(s_prev)));
    }
    Ok(out)
}
