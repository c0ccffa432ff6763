//! `solve`, `simulate` and `demo`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use excursion_core::diffusion::{make_abm, make_gbm, DiffusionModel, FundamentalPair};
use excursion_core::gbm_app::{make_app, region_map, vss_closed_form};
use excursion_core::majorant::{build_surface, solve_row, value_at, Region, SurfaceOptions};
use excursion_core::reward::{AbsorptionConvention, BoundarySpec, Policy, RewardSpec};
use excursion_core::sim::{simulate_policy, MCConfig};
use excursion_core::vss::{self, solve_corollary1, solve_prop2, solve_x_independent};

use crate::config::{fmt_f64, Absorption, BoundaryCfg, ConfigError, ModelKindCfg, ProblemConfig, RewardKind};
use crate::table::RewardTable;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{name}: {source}", name = .source.name())]
    Solver {
        #[from]
        source: excursion_core::Error,
    },
    #[error("{path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown demo `{0}` (expected put, lookback, shepp or invest)")]
    UnknownDemo(String),
    #[error("one or more golden checks failed")]
    GoldenMismatch,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownDemo(_) => 2,
            CliError::Solver { .. } => 3,
            CliError::Output { .. } => 4,
            CliError::GoldenMismatch => 1,
        }
    }
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub quiet: bool,
    pub threads: Option<usize>,
}

/// A configuration turned into solver objects.
pub struct Problem {
    pub model: DiffusionModel,
    pub fp: FundamentalPair,
    pub reward: RewardSpec,
    pub boundary: BoundarySpec,
}

impl Problem {
    pub fn from_config(cfg: &ProblemConfig) -> Result<Self, CliError> {
        let m = &cfg.model;
        let (model, fp) = match m.kind {
            ModelKindCfg::Gbm => make_gbm(m.mu, m.sigma, m.q)?,
            ModelKindCfg::Abm => make_abm(m.mu, m.sigma, m.q)?,
        };
        let reward = match &cfg.reward.kind {
            RewardKind::Put { strike } => RewardSpec::put(*strike),
            RewardKind::Lookback { k } => RewardSpec::lookback(*k),
            RewardKind::PowerIncome { p, pay_state } => RewardSpec::power_income(&model, *p, *pay_state)?,
            RewardKind::Table { path } => RewardTable::load(path)?.into_reward(&path.display().to_string()),
        };
        let reward = reward.with_absorption(match cfg.reward.absorption {
            Absorption::Zero => AbsorptionConvention::ZeroAtAbsorption,
            Absorption::Reward => AbsorptionConvention::RewardAtAbsorption,
        });
        let boundary = match cfg.boundary {
            BoundaryCfg::Proportional { beta } => BoundarySpec::proportional(beta)?,
            BoundaryCfg::Constant { c } => BoundarySpec::constant(c)?,
            BoundaryCfg::None => BoundarySpec::none_for(model.state_space()),
        };
        Ok(Self { model, fp, reward, boundary })
    }

    /// Total value `fbar + V` at `(x, s)` from the majorant of row `s`.
    pub fn analytic_value(&self, x: f64, s: f64) -> Result<f64, CliError> {
        let (sol, maj, _) = solve_row(&self.fp, &self.reward, &self.boundary, s, SurfaceOptions::for_reward(&self.reward))?;
        let v = if x == s {
            sol.value
        } else {
            match &maj {
                Some(m) => value_at(m, &self.fp, x)?.0,
                None => {
                    return Err(excursion_core::Error::OutOfExcursionRange { x, lo: s, hi: s }.into());
                }
            }
        };
        Ok(v + (self.reward.fbar)(x, s))
    }

    /// Optimal thresholds tabulated on levels from `s_lo` upwards, linear in
    /// between and flat past the last node.
    pub fn tabulated_policy(&self, s_lo: f64, s_hi: f64) -> Result<Policy, CliError> {
        let nodes = policy_nodes(&self.fp, s_lo, s_hi);
        let method = SurfaceOptions::for_reward(&self.reward).method;
        let mut ls = Vec::with_capacity(nodes.len());
        for &m in &nodes {
            let b = self.boundary.b(m);
            let l = if b > 0.0 {
                let sol = vss::solve(&self.fp, &self.reward, m, b, method)?;
                // A diagonal value below the immediate reward means stop at once.
                if sol.value < self.reward.h(m, m) {
                    0.0
                } else {
                    sol.l_star
                }
            } else {
                0.0
            };
            ls.push(l);
        }
        Ok(Policy::tabulated(nodes, ls)?)
    }
}

const POLICY_NODES: usize = 400;

/// Geometric nodes over three decades for GBM, linear over many decay
/// lengths for ABM.
fn policy_nodes(fp: &FundamentalPair, s_lo: f64, s_hi: f64) -> Vec<f64> {
    let n = POLICY_NODES;
    match fp.exp_rates() {
        Some((_, up)) => {
            let top = s_hi + 40.0 / up;
            (0..n).map(|i| s_lo + (top - s_lo) * i as f64 / (n - 1) as f64).collect()
        }
        None => {
            let ratio = (1000.0 * s_hi / s_lo).powf(1.0 / (n - 1) as f64);
            (0..n).map(|i| s_lo * ratio.powi(i as i32)).collect()
        }
    }
}

fn out_dir(opts: &RunOptions, cfg: Option<&ProblemConfig>) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf, CliError> {
    let err = |p: &Path, source| CliError::Output { path: p.display().to_string(), source };
    fs::create_dir_all(dir).map_err(|e| err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| err(&path, e))?;
    Ok(path)
}

pub fn cmd_solve(config: &Path, opts: &RunOptions, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ProblemConfig::load(config)?;
    let p = Problem::from_config(&cfg)?;
    let (xs, ss) = (cfg.grid.x_grid(), cfg.grid.s_grid());
    let surface = build_surface(&p.fp, &p.reward, &p.boundary, &xs, &ss, SurfaceOptions::for_reward(&p.reward))?;

    let mut vss_csv = String::from("s,l_star,value,gamma_slope,method,boundary_binding\n");
    for r in &surface.rows {
        let v = &r.vss;
        let _ = writeln!(
            vss_csv,
            "{},{},{},{},{},{}",
            fmt_f64(r.s),
            fmt_f64(v.l_star),
            fmt_f64(v.value),
            fmt_f64(v.gamma_slope),
            v.method,
            v.boundary_binding
        );
    }
    let mut surf_csv = String::from("x,s,value,region\n");
    for (j, &s) in surface.s_grid.iter().enumerate() {
        for (i, &x) in surface.x_grid.iter().enumerate() {
            let _ = writeln!(surf_csv, "{},{},{},{}", fmt_f64(x), fmt_f64(s), fmt_f64(surface.values[j][i]), surface.region[j][i].as_str());
        }
    }
    let dir = out_dir(opts, Some(&cfg));
    let vp = write_file(&dir, "vss.csv", &vss_csv)?;
    let sp = write_file(&dir, "surface.csv", &surf_csv)?;
    if opts.quiet {
        return Ok(());
    }

    let dx = if xs.len() > 1 { xs[1] - xs[0] } else { 0.0 };
    let ds = if ss.len() > 1 { ss[1] - ss[0] } else { 0.0 };
    let count = |r: Region| surface.region.iter().flatten().filter(|&&x| x == r).count();
    let mut t = String::new();
    let _ = writeln!(t, "reward {}  boundary {:?}", p.reward.label, p.boundary);
    let _ = writeln!(t, "grid {}x{}  dx={dx:.6}  ds={ds:.6}  (region edges are exact to one cell)", xs.len(), ss.len());
    let _ = writeln!(
        t,
        "cells: STOP {}  CONTINUE {}  INFEASIBLE {}",
        count(Region::Stop),
        count(Region::Continue),
        count(Region::Infeasible)
    );
    let _ = writeln!(t, "{:>12} {:>12} {:>12} {:>14} {:>11} {:>8}", "s", "l_star", "s-l_star", "V(s,s)", "method", "binding");
    let n = surface.rows.len();
    let step = n.div_ceil(12).max(1);
    for (k, r) in surface.rows.iter().enumerate() {
        if k % step != 0 && k + 1 != n {
            continue;
        }
        let v = &r.vss;
        let _ = writeln!(
            t,
            "{:>12.6} {:>12.6} {:>12.6} {:>14.8} {:>11} {:>8}",
            r.s,
            v.l_star,
            v.stop_point(),
            v.value,
            v.method.to_string(),
            v.boundary_binding
        );
    }
    let _ = writeln!(t, "wrote {} and {}", vp.display(), sp.display());
    let _ = out.write_all(t.as_bytes());
    Ok(())
}

pub struct SimulateArgs {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
}

pub fn cmd_simulate(config: &Path, args: &SimulateArgs, opts: &RunOptions, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ProblemConfig::load(config)?;
    let mc = cfg
        .mc
        .clone()
        .ok_or_else(|| ConfigError::Invalid { section: "mc".into(), msg: "section required by simulate".into() })?;
    let p = Problem::from_config(&cfg)?;
    let mcfg = MCConfig {
        n_paths: args.paths.unwrap_or(mc.n_paths),
        dt: mc.dt,
        t_max: mc.t_max,
        seed: args.seed.unwrap_or(mc.seed),
        scheme: mc.scheme,
        antithetic: mc.antithetic,
        bridge: mc.bridge,
        threads: opts.threads,
    };
    mcfg.validate()?;
    let s_lo = mc.starts.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let s_hi = mc.starts.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let policy = p.tabulated_policy(s_lo, s_hi)?;

    let mut csv = String::from("x0,s0,estimate,stderr,n_stopped,n_absorbed,n_censored\n");
    let mut t = String::new();
    let _ = writeln!(t, "{} paths, dt={}, seed={}", mcfg.n_paths, mcfg.dt, mcfg.seed);
    let _ = writeln!(t, "{:>10} {:>10} {:>14} {:>12} {:>14} {:>8}", "x0", "s0", "mc", "stderr", "analytic", "z");
    for &(x0, s0) in &mc.starts {
        let r = simulate_policy(&p.model, &p.reward, &p.boundary, &policy, x0, s0, &mcfg)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            fmt_f64(x0),
            fmt_f64(s0),
            fmt_f64(r.estimate),
            fmt_f64(r.stderr),
            r.n_stopped,
            r.n_absorbed,
            r.n_censored
        );
        let exact = p.analytic_value(x0, s0)?;
        let _ = writeln!(
            t,
            "{:>10.4} {:>10.4} {:>14.8} {:>12.3e} {:>14.8} {:>8.3}{}",
            x0,
            s0,
            r.estimate,
            r.stderr,
            exact,
            r.z_score(exact),
            if r.discount_bias_note { "  (censoring may bias)" } else { "" }
        );
    }
    let path = write_file(&out_dir(opts, Some(&cfg)), "mc.csv", &csv)?;
    if !opts.quiet {
        let _ = writeln!(t, "wrote {}", path.display());
        let _ = out.write_all(t.as_bytes());
    }
    Ok(())
}

/// Golden-number checker for the demos.
struct Checks {
    text: String,
    ok: bool,
}

impl Checks {
    fn new() -> Self {
        Self { text: String::new(), ok: true }
    }

    fn info(&mut self, name: &str, v: f64) {
        let _ = writeln!(self.text, "  {name:<34} {v:>20.12}");
    }

    fn near(&mut self, name: &str, v: f64, want: f64, tol: f64) {
        let pass = (v - want).abs() <= tol;
        self.ok &= pass;
        let _ = writeln!(
            self.text,
            "  {name:<34} {v:>20.12}   expected {want} +/- {tol:e}   {}",
            if pass { "PASS" } else { "FAIL" }
        );
    }

    fn rel(&mut self, name: &str, a: f64, b: f64, tol: f64) {
        let r = (a - b).abs() / b.abs().max(1e-300);
        let pass = r <= tol;
        self.ok &= pass;
        let _ = writeln!(
            self.text,
            "  {name:<34} {a:>20.12} vs {b:.12}   rel {r:.2e} <= {tol:e}   {}",
            if pass { "PASS" } else { "FAIL" }
        );
    }

    fn flag(&mut self, name: &str, pass: bool) {
        self.ok &= pass;
        let _ = writeln!(self.text, "  {name:<34} {}", if pass { "PASS" } else { "FAIL" });
    }
}

pub const DEMOS: [&str; 4] = ["put", "lookback", "shepp", "invest"];

pub fn cmd_demo(name: &str, opts: &RunOptions, out: &mut dyn Write) -> Result<(), CliError> {
    let mut c = Checks::new();
    match name {
        "put" => demo_put(&mut c)?,
        "lookback" => demo_lookback(&mut c)?,
        "shepp" => demo_shepp(&mut c)?,
        "invest" => demo_invest(&mut c)?,
        other => return Err(CliError::UnknownDemo(other.into())),
    }
    if !opts.quiet || !c.ok {
        let _ = writeln!(out, "demo {name}");
        let _ = out.write_all(c.text.as_bytes());
        let _ = writeln!(out, "{}", if c.ok { "all checks passed" } else { "some checks FAILED" });
    }
    if c.ok {
        Ok(())
    } else {
        Err(CliError::GoldenMismatch)
    }
}

const MU: f64 = 0.05;
const SIGMA: f64 = 0.25;
const Q: f64 = 0.15;

fn demo_put(c: &mut Checks) -> Result<(), CliError> {
    let (_, fp) = make_gbm(MU, SIGMA, Q)?;
    let k = 5.0;
    let sol = solve_corollary1(&fp, &RewardSpec::put(k), 5.0, 5.0)?;
    let (g0, _) = fp.power_exponents().expect("gbm");
    let x_star = sol.stop_point();
    c.near("x* at s=5", x_star, 3.57604, 1e-4);
    c.near("l* at s=5", sol.l_star, 1.42396, 1e-4);
    c.rel("x* vs K g0/(g0-1)", x_star, k * g0 / (g0 - 1.0), 1e-8);
    c.rel("V(5,5) vs (K-x*)(5/x*)^g0", sol.value, (k - x_star) * (5.0 / x_star).powf(g0), 1e-8);
    Ok(())
}

fn lookback_beta(fp: &FundamentalPair, k: f64, s: f64) -> Result<f64, CliError> {
    Ok(solve_prop2(fp, &RewardSpec::lookback(k), s, s)?.stop_point() / s)
}

fn demo_lookback(c: &mut Checks) -> Result<(), CliError> {
    let (_, fp) = make_gbm(MU, SIGMA, Q)?;
    let levels = [1.0, 2.0, 5.0, 10.0];
    let betas = levels.iter().map(|&s| lookback_beta(&fp, 0.5, s)).collect::<Result<Vec<_>, _>>()?;
    let spread = betas.iter().copied().fold(f64::NEG_INFINITY, f64::max) - betas.iter().copied().fold(f64::INFINITY, f64::min);
    c.near("beta, k=1/2", betas[0], 0.784073, 1e-5);
    c.near("beta spread over s in {1,2,5,10}", spread, 0.0, 1e-6);
    c.info("beta, k=0", lookback_beta(&fp, 0.0, 1.0)?);
    Ok(())
}

fn demo_shepp(c: &mut Checks) -> Result<(), CliError> {
    let (_, fp) = make_gbm(MU, SIGMA, Q)?;
    let (g0, g1) = fp.power_exponents().expect("gbm");
    let r = RewardSpec::running_max();
    for &s in &[1.0, 5.0] {
        let sol = solve_prop2(&fp, &r, s, s)?;
        let beta = sol.stop_point() / s;
        let closed = s / (g1 - g0) * (g1 * beta.powf(-g0) - g0 * beta.powf(-g1));
        let xi = solve_x_independent(&fp, &r, s, sol.l_star)?;
        c.info(&format!("beta (s={s})"), beta);
        c.info(&format!("V(s,s)/s (s={s})"), sol.value / s);
        c.rel(&format!("series vs closed form (s={s})"), sol.value, closed, 1e-8);
        c.rel(&format!("hazard vs closed form (s={s})"), xi, closed, 1e-8);
        c.rel(&format!("series vs hazard (s={s})"), sol.value, xi, 1e-8);
    }
    Ok(())
}

fn demo_invest(c: &mut Checks) -> Result<(), CliError> {
    let p = make_app(0.05, 0.1, 0.1, 0.8)?;
    let g = p.guards;
    c.info("alpha", p.alpha);
    c.info("gamma0", p.gamma0);
    c.info("gamma1", p.gamma1);
    c.near("inflection residual H''(r)", g.r_residual, 0.0, 1e-8);
    c.near("tangency residual at u", g.u_residual, 0.0, 1e-8);
    c.near("diagonal switch residual", g.switch_residual, 0.0, 1e-8);
    c.info("F^-1(u)", p.s_chord_upper());
    c.info("F^-1(r)/beta", p.s_concave_lower());
    c.info("diagonal switch level", p.s_switch);
    let r = p.reward();
    let b = p.boundary();
    for &s in &[0.5, 1.0, 2.0, 5.0] {
        let closed = vss_closed_form(&p, s)?;
        let generic = solve_corollary1(&p.fp, &r, s, b.b(s))?;
        c.rel(&format!("V(s,s) closed vs generic (s={s})"), closed, generic.value, 1e-8);
    }
    c.info("total value fbar+V at (1,1)", p.fbar(1.0) + vss_closed_form(&p, 1.0)?);

    // Band structure on a coarse grid: every row is one contiguous band of
    // each region, and the band edges move monotonically with s.
    let xs: Vec<f64> = (1..=120).map(|i| 5.0 * i as f64).collect();
    let ss = xs.clone();
    let map = region_map(&p, &xs, &ss)?;
    let monotone = map.surface.region.iter().all(|row| {
        let labels: Vec<Region> = row.iter().copied().filter(|&r| r != Region::Infeasible).collect();
        labels.windows(2).filter(|w| w[0] != w[1]).count() <= 2
    });
    c.flag("region rows have at most three bands", monotone);
    Ok(())
}
