//! Problem configuration files.
//!
//! One assignment per line, `section.key = value`; `#` starts a comment.
//! Sections: `model`, `reward`, `boundary`, `grid`, `mc` (optional) and
//! `output` (optional). See the README for the full key list.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use excursion_core::sim::Scheme;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {section}.{key}: {msg}")]
    Value { line: usize, section: String, key: String, msg: String },
    #[error("{section}: missing field {key}")]
    Missing { section: String, key: String },
    #[error("{section}: {msg}")]
    Invalid { section: String, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKindCfg {
    Gbm,
    Abm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCfg {
    pub kind: ModelKindCfg,
    pub mu: f64,
    pub sigma: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RewardKind {
    Put { strike: f64 },
    Lookback { k: f64 },
    /// Income `x^p`; stopping pays the state when `pay_state`, else nothing.
    PowerIncome { p: f64, pay_state: bool },
    /// Net reward tabulated on a rectangular `(x, s)` grid.
    Table { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Absorption {
    Zero,
    Reward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardCfg {
    pub kind: RewardKind,
    pub absorption: Absorption,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCfg {
    Proportional { beta: f64 },
    Constant { c: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCfg {
    pub x_min: f64,
    pub x_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub nx: usize,
    pub ns: usize,
}

impl GridCfg {
    pub fn x_grid(&self) -> Vec<f64> {
        linspace(self.x_min, self.x_max, self.nx)
    }

    pub fn s_grid(&self) -> Vec<f64> {
        linspace(self.s_min, self.s_max, self.ns)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCfg {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub antithetic: bool,
    pub bridge: bool,
    /// Starting points `(x0, s0)`.
    pub starts: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputCfg {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub model: ModelCfg,
    pub reward: RewardCfg,
    pub boundary: BoundaryCfg,
    pub grid: GridCfg,
    pub mc: Option<McCfg>,
    pub output: OutputCfg,
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

/// Raw `section -> key -> value` map with line numbers for diagnostics.
struct Raw {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

const SECTIONS: [&str; 6] = ["model", "reward", "boundary", "grid", "mc", "output"];

impl Raw {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (lhs, rhs) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected `section.key = value`, got `{content}`") })?;
            let (section, key) = lhs
                .trim()
                .split_once('.')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("key `{}` has no section", lhs.trim()) })?;
            let (section, key) = (section.trim(), key.trim());
            if !SECTIONS.contains(&section) {
                return Err(ConfigError::Syntax { line, msg: format!("unknown section `{section}`") });
            }
            if key.is_empty() {
                return Err(ConfigError::Syntax { line, msg: "empty key".into() });
            }
            let keys = sections.entry(section.to_string()).or_default();
            if let Some(prev) = keys.get(key) {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("{section}.{key} already set on line {}", prev.line),
                });
            }
            keys.insert(key.to_string(), Entry { line, value: rhs.trim().to_string(), used: false });
        }
        Ok(Self { sections })
    }

    fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn get(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        let e = self.sections.get_mut(section)?.get_mut(key)?;
        e.used = true;
        Some((e.line, e.value.clone()))
    }

    fn need(&mut self, section: &str, key: &str) -> Result<(usize, String), ConfigError> {
        self.get(section, key)
            .ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    fn parsed<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|_| ConfigError::Value {
                line,
                section: section.into(),
                key: key.into(),
                msg: format!("expected {what}, got `{v}`"),
            }),
        }
    }

    fn float(&mut self, section: &str, key: &str) -> Result<f64, ConfigError> {
        self.opt_float(section, key)?
            .ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    fn opt_float(&mut self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.parsed(section, key, "a number")?;
        if let Some(x) = v {
            if !x.is_finite() {
                let line = self.sections[section][key].line;
                return Err(ConfigError::Value { line, section: section.into(), key: key.into(), msg: "must be finite".into() });
            }
        }
        Ok(v)
    }

    fn count(&mut self, section: &str, key: &str) -> Result<usize, ConfigError> {
        self.parsed(section, key, "a nonnegative integer")?
            .ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    fn flag(&mut self, section: &str, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some((line, v)) => match v.as_str() {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                _ => Err(ConfigError::Value {
                    line,
                    section: section.into(),
                    key: key.into(),
                    msg: format!("expected true or false, got `{v}`"),
                }),
            },
        }
    }

    fn bad(&self, section: &str, key: &str, msg: String) -> ConfigError {
        let line = self.sections.get(section).and_then(|k| k.get(key)).map_or(0, |e| e.line);
        ConfigError::Value { line, section: section.into(), key: key.into(), msg }
    }

    fn check_unused(&self) -> Result<(), ConfigError> {
        for (section, keys) in &self.sections {
            for (key, e) in keys {
                if !e.used {
                    return Err(ConfigError::Value {
                        line: e.line,
                        section: section.clone(),
                        key: key.clone(),
                        msg: "unknown key".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

impl ProblemConfig {
    /// Parse configuration text; relative table paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut raw = Raw::parse(text)?;
        let (_, kind) = raw.need("model", "kind")?;
        let kind = match kind.as_str() {
            "gbm" => ModelKindCfg::Gbm,
            "abm" => ModelKindCfg::Abm,
            other => return Err(raw.bad("model", "kind", format!("expected gbm or abm, got `{other}`"))),
        };
        let model = ModelCfg { kind, mu: raw.float("model", "mu")?, sigma: raw.float("model", "sigma")?, q: raw.float("model", "q")? };
        if !(model.sigma > 0.0) {
            return Err(raw.bad("model", "sigma", "must be positive".into()));
        }
        if !(model.q > 0.0) {
            return Err(raw.bad("model", "q", "must be positive".into()));
        }

        let (_, rk) = raw.need("reward", "kind")?;
        let kind = match rk.as_str() {
            "put" => RewardKind::Put { strike: raw.float("reward", "strike")? },
            "lookback" => RewardKind::Lookback { k: raw.float("reward", "k")? },
            "power_income" => {
                let p = raw.float("reward", "p")?;
                let pay_state = match raw.get("reward", "g") {
                    None => true,
                    Some((_, g)) => match g.as_str() {
                        "state" => true,
                        "zero" => false,
                        other => return Err(raw.bad("reward", "g", format!("expected state or zero, got `{other}`"))),
                    },
                };
                RewardKind::PowerIncome { p, pay_state }
            }
            "table" => {
                let (_, p) = raw.need("reward", "path")?;
                let path = PathBuf::from(p);
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path,
                };
                RewardKind::Table { path }
            }
            other => {
                return Err(raw.bad("reward", "kind", format!("expected put, lookback, power_income or table, got `{other}`")))
            }
        };
        let absorption = match raw.get("reward", "absorption") {
            None => Absorption::Zero,
            Some((_, a)) => match a.as_str() {
                "zero" => Absorption::Zero,
                "reward" => Absorption::Reward,
                other => return Err(raw.bad("reward", "absorption", format!("expected zero or reward, got `{other}`"))),
            },
        };
        let reward = RewardCfg { kind, absorption };

        let (_, bk) = raw.need("boundary", "kind")?;
        let boundary = match bk.as_str() {
            "proportional" => {
                let beta = raw.float("boundary", "beta")?;
                if !(0.0..1.0).contains(&beta) {
                    return Err(raw.bad("boundary", "beta", "must lie in [0, 1)".into()));
                }
                BoundaryCfg::Proportional { beta }
            }
            "constant" => {
                let c = raw.float("boundary", "c")?;
                if !(c >= 0.0) {
                    return Err(raw.bad("boundary", "c", "must be nonnegative".into()));
                }
                BoundaryCfg::Constant { c }
            }
            "none" => BoundaryCfg::None,
            other => return Err(raw.bad("boundary", "kind", format!("expected proportional, constant or none, got `{other}`"))),
        };

        let nx = raw.count("grid", "nx")?;
        let ns = raw.count("grid", "ns")?;
        let grid = GridCfg {
            x_min: raw.float("grid", "x_min")?,
            x_max: raw.float("grid", "x_max")?,
            s_min: raw.float("grid", "s_min")?,
            s_max: raw.float("grid", "s_max")?,
            nx,
            ns,
        };
        let grid_err = |msg: &str| ConfigError::Invalid { section: "grid".into(), msg: msg.into() };
        if grid.nx < 2 || grid.ns < 1 {
            return Err(grid_err("need nx >= 2 and ns >= 1"));
        }
        if !(grid.x_min < grid.x_max) || !(grid.s_min <= grid.s_max) || (grid.ns > 1 && grid.s_min == grid.s_max) {
            return Err(grid_err("bounds must be increasing"));
        }
        if grid.s_max < grid.x_min {
            return Err(grid_err("no feasible cell: s_max < x_min"));
        }
        if model.kind == ModelKindCfg::Gbm && !(grid.x_min > 0.0 && grid.s_min > 0.0) {
            return Err(grid_err("grid must lie in the positive half-line for gbm"));
        }

        let mc = if raw.has_section("mc") {
            let seed = match raw.get("mc", "seed") {
                None => 0,
                Some((line, v)) => v.parse::<u64>().map_err(|_| ConfigError::Value {
                    line,
                    section: "mc".into(),
                    key: "seed".into(),
                    msg: format!("expected an unsigned 64-bit integer, got `{v}`"),
                })?,
            };
            let scheme = match raw.get("mc", "scheme") {
                None => Scheme::ExactGbm,
                Some((_, v)) => match v.as_str() {
                    "exact" => Scheme::ExactGbm,
                    "euler" => Scheme::EulerMaruyama,
                    other => return Err(raw.bad("mc", "scheme", format!("expected exact or euler, got `{other}`"))),
                },
            };
            let starts = match raw.get("mc", "start") {
                None => return Err(ConfigError::Missing { section: "mc".into(), key: "start".into() }),
                Some((line, v)) => parse_starts(&v).map_err(|msg| ConfigError::Value {
                    line,
                    section: "mc".into(),
                    key: "start".into(),
                    msg,
                })?,
            };
            let cfg = McCfg {
                n_paths: raw.parsed("mc", "paths", "a positive integer")?.unwrap_or(100_000),
                dt: raw.opt_float("mc", "dt")?.unwrap_or(1e-3),
                t_max: raw.opt_float("mc", "t_max")?.unwrap_or(100.0),
                seed,
                scheme,
                antithetic: raw.flag("mc", "antithetic")?.unwrap_or(false),
                bridge: raw.flag("mc", "bridge")?.unwrap_or(true),
                starts,
            };
            if cfg.n_paths == 0 {
                return Err(raw.bad("mc", "paths", "must be positive".into()));
            }
            if !(cfg.dt > 0.0) {
                return Err(raw.bad("mc", "dt", "must be positive".into()));
            }
            if !(cfg.t_max >= cfg.dt) {
                return Err(raw.bad("mc", "t_max", "must be at least dt".into()));
            }
            Some(cfg)
        } else {
            None
        };

        let output = OutputCfg {
            dir: raw.get("output", "dir").map(|(_, v)| PathBuf::from(v)),
        };
        raw.check_unused()?;
        Ok(Self { model, reward, boundary, grid, mc, output })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::parse(&text, path.parent())
    }
}

/// `x0:s0` pairs separated by commas.
fn parse_starts(v: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    for item in v.split(',') {
        let (a, b) = item.trim().split_once(':').ok_or_else(|| format!("expected x0:s0, got `{}`", item.trim()))?;
        let x0: f64 = a.trim().parse().map_err(|_| format!("bad x0 `{}`", a.trim()))?;
        let s0: f64 = b.trim().parse().map_err(|_| format!("bad s0 `{}`", b.trim()))?;
        if !(s0 >= x0) {
            return Err(format!("need s0 >= x0 in `{}`", item.trim()));
        }
        out.push((x0, s0));
    }
    Ok(out)
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

impl fmt::Display for ProblemConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.model;
        let kind = match m.kind {
            ModelKindCfg::Gbm => "gbm",
            ModelKindCfg::Abm => "abm",
        };
        writeln!(f, "model.kind = {kind}")?;
        writeln!(f, "model.mu = {}", fmt_f64(m.mu))?;
        writeln!(f, "model.sigma = {}", fmt_f64(m.sigma))?;
        writeln!(f, "model.q = {}", fmt_f64(m.q))?;
        match &self.reward.kind {
            RewardKind::Put { strike } => {
                writeln!(f, "reward.kind = put")?;
                writeln!(f, "reward.strike = {}", fmt_f64(*strike))?;
            }
            RewardKind::Lookback { k } => {
                writeln!(f, "reward.kind = lookback")?;
                writeln!(f, "reward.k = {}", fmt_f64(*k))?;
            }
            RewardKind::PowerIncome { p, pay_state } => {
                writeln!(f, "reward.kind = power_income")?;
                writeln!(f, "reward.p = {}", fmt_f64(*p))?;
                writeln!(f, "reward.g = {}", if *pay_state { "state" } else { "zero" })?;
            }
            RewardKind::Table { path } => {
                writeln!(f, "reward.kind = table")?;
                writeln!(f, "reward.path = {}", path.display())?;
            }
        }
        let absorption = match self.reward.absorption {
            Absorption::Zero => "zero",
            Absorption::Reward => "reward",
        };
        writeln!(f, "reward.absorption = {absorption}")?;
        match &self.boundary {
            BoundaryCfg::Proportional { beta } => {
                writeln!(f, "boundary.kind = proportional")?;
                writeln!(f, "boundary.beta = {}", fmt_f64(*beta))?;
            }
            BoundaryCfg::Constant { c } => {
                writeln!(f, "boundary.kind = constant")?;
                writeln!(f, "boundary.c = {}", fmt_f64(*c))?;
            }
            BoundaryCfg::None => writeln!(f, "boundary.kind = none")?,
        }
        let g = &self.grid;
        writeln!(f, "grid.x_min = {}", fmt_f64(g.x_min))?;
        writeln!(f, "grid.x_max = {}", fmt_f64(g.x_max))?;
        writeln!(f, "grid.s_min = {}", fmt_f64(g.s_min))?;
        writeln!(f, "grid.s_max = {}", fmt_f64(g.s_max))?;
        writeln!(f, "grid.nx = {}", g.nx)?;
        writeln!(f, "grid.ns = {}", g.ns)?;
        if let Some(mc) = &self.mc {
            writeln!(f, "mc.paths = {}", mc.n_paths)?;
            writeln!(f, "mc.dt = {}", fmt_f64(mc.dt))?;
            writeln!(f, "mc.t_max = {}", fmt_f64(mc.t_max))?;
            writeln!(f, "mc.seed = {}", mc.seed)?;
            let scheme = match mc.scheme {
                Scheme::ExactGbm => "exact",
                Scheme::EulerMaruyama => "euler",
            };
            writeln!(f, "mc.scheme = {scheme}")?;
            writeln!(f, "mc.antithetic = {}", mc.antithetic)?;
            writeln!(f, "mc.bridge = {}", mc.bridge)?;
            let starts: Vec<String> = mc.starts.iter().map(|(x, s)| format!("{}:{}", fmt_f64(*x), fmt_f64(*s))).collect();
            writeln!(f, "mc.start = {}", starts.join(", "))?;
        }
        if let Some(dir) = &self.output.dir {
            writeln!(f, "output.dir = {}", dir.display())?;
        }
        Ok(())
    }
}
