//! Rewards, absorbing boundaries and excursion-threshold policies.

use std::fmt;
use std::sync::Arc;

use crate::diffusion::{DiffusionModel, ModelKind, ScalarFn, StateSpace};
use crate::error::{Error, Result};
use crate::numeric::{central_diff, hermite, pchip_slopes, second_diff};

pub type BivariateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// What the controller receives when the drawdown exceeds the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbsorptionConvention {
    /// Absorption forfeits the stopping reward.
    ZeroAtAbsorption,
    /// Absorption pays the stopping reward at the absorption point.
    RewardAtAbsorption,
}

/// Where the q-potential of the running income comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbarSource {
    /// No running income.
    Zero,
    ClosedForm,
    /// Tabulated Monte Carlo estimate; residual checks are skipped.
    Stochastic,
}

/// Stopping reward `g`, running income `f`, its q-potential `fbar`, and the
/// net reward `h = g - fbar`.
#[derive(Clone)]
pub struct RewardSpec {
    pub g: BivariateFn,
    pub f: BivariateFn,
    pub fbar: BivariateFn,
    pub s_dependent: bool,
    pub x_dependent: bool,
    pub absorption: AbsorptionConvention,
    pub fbar_source: FbarSource,
    pub label: String,
}

impl fmt::Debug for RewardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewardSpec")
            .field("label", &self.label)
            .field("s_dependent", &self.s_dependent)
            .field("x_dependent", &self.x_dependent)
            .field("absorption", &self.absorption)
            .field("fbar_source", &self.fbar_source)
            .finish()
    }
}

fn zero2() -> BivariateFn {
    Arc::new(|_, _| 0.0)
}

impl RewardSpec {
    /// Pure stopping reward, no running income.
    pub fn terminal(label: &str, g: BivariateFn, x_dependent: bool, s_dependent: bool) -> Self {
        Self {
            g,
            f: zero2(),
            fbar: zero2(),
            s_dependent,
            x_dependent,
            absorption: AbsorptionConvention::ZeroAtAbsorption,
            fbar_source: FbarSource::Zero,
            label: label.to_string(),
        }
    }

    /// Perpetual put `(K - x)^+`.
    pub fn put(strike: f64) -> Self {
        Self::terminal(&format!("put(K={strike})"), Arc::new(move |x, _| (strike - x).max(0.0)), true, false)
    }

    /// Lookback `s - k x`.
    pub fn lookback(k: f64) -> Self {
        Self::terminal(&format!("lookback(k={k})"), Arc::new(move |x, s| s - k * x), k != 0.0, true)
    }

    /// Reward equal to the running maximum.
    pub fn running_max() -> Self {
        let mut r = Self::terminal("running_max", Arc::new(|_, s| s), false, true);
        r.label = "shepp".into();
        r
    }

    /// Running income `x^p` with stopping reward `x` (when `pay_state`) or
    /// zero, under a GBM model where the q-potential is `x^p / (q - mu p - sigma^2 p (p-1)/2)`.
    pub fn power_income(model: &DiffusionModel, p: f64, pay_state: bool) -> Result<Self> {
        if model.kind() != ModelKind::Gbm {
            return Err(Error::InvalidParameter("power income has a closed-form potential only under GBM".into()));
        }
        let (mu, sigma) = model.params().expect("gbm has params");
        let denom = model.q() - mu * p - 0.5 * sigma * sigma * p * (p - 1.0);
        if !(denom > 0.0) {
            return Err(Error::ConvergenceViolated(-denom));
        }
        let coef = 1.0 / denom;
        let g: BivariateFn = if pay_state { Arc::new(|x, _| x) } else { zero2() };
        Ok(Self {
            g,
            f: if p == 0.5 { Arc::new(|x, _| x.sqrt()) } else { Arc::new(move |x, _| x.powf(p)) },
            fbar: Arc::new(move |x, _| coef * x.powf(p)),
            s_dependent: false,
            x_dependent: true,
            absorption: AbsorptionConvention::ZeroAtAbsorption,
            fbar_source: FbarSource::ClosedForm,
            label: format!("power_income(p={p})"),
        })
    }

    pub fn with_absorption(mut self, convention: AbsorptionConvention) -> Self {
        self.absorption = convention;
        self
    }

    /// Net reward `g - fbar`.
    pub fn h(&self, x: f64, s: f64) -> f64 {
        (self.g)(x, s) - (self.fbar)(x, s)
    }

    /// Net value credited at absorption, measured against the running-income potential.
    pub fn absorption_value(&self, x: f64, s: f64) -> f64 {
        match self.absorption {
            AbsorptionConvention::RewardAtAbsorption => self.h(x, s),
            AbsorptionConvention::ZeroAtAbsorption => -(self.fbar)(x, s),
        }
    }

    /// Gross payoff received at absorption in the original problem.
    pub fn absorption_payoff(&self, x: f64, s: f64) -> f64 {
        match self.absorption {
            AbsorptionConvention::RewardAtAbsorption => (self.g)(x, s),
            AbsorptionConvention::ZeroAtAbsorption => 0.0,
        }
    }

    /// Largest relative Feynman–Kac residual `|(A - q) fbar + f|` over the
    /// given `(x, s)` points (derivatives in `x` at fixed `s`).
    pub fn fbar_residual(&self, model: &DiffusionModel, points: &[(f64, f64)]) -> f64 {
        let mut worst: f64 = 0.0;
        for &(x, s) in points {
            let u = |t: f64| (self.fbar)(t, s);
            let h = 1e-3 * x.abs().max(1e-3);
            let d1 = central_diff(u, x, h);
            let d2 = second_diff(u, x, h);
            let v = u(x);
            let fx = (self.f)(x, s);
            let res = model.generator_residual(x, v, d1, d2) + fx;
            let sig = model.vol(x);
            let scale = (model.q() * v).abs() + fx.abs() + (0.5 * sig * sig * d2).abs() + (model.drift(x) * d1).abs();
            worst = worst.max(res.abs() / scale.max(1e-300));
        }
        worst
    }
}

/// Cubic table of an s-independent q-potential, used when no closed form exists.
#[derive(Debug, Clone)]
pub struct FbarTable {
    pub x: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    slopes: Vec<f64>,
}

impl FbarTable {
    pub fn new(x: Vec<f64>, value: Vec<f64>, stderr: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != value.len() || !x.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter("fbar table needs >= 2 strictly increasing nodes".into()));
        }
        let slopes = pchip_slopes(&x, &value);
        Ok(Self { x, value, stderr, slopes })
    }

    /// Monotone cubic interpolation; flat extrapolation outside the table.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            return self.value[0];
        }
        if x >= self.x[n - 1] {
            return self.value[n - 1];
        }
        let i = self.x.partition_point(|&t| t <= x) - 1;
        hermite(self.x[i], self.x[i + 1], self.value[i], self.value[i + 1], self.slopes[i], self.slopes[i + 1], x)
    }

    /// Attach this table as the potential of `f` in a reward.
    pub fn attach(self, mut reward: RewardSpec, f: BivariateFn) -> RewardSpec {
        let table = Arc::new(self);
        reward.f = f;
        reward.fbar = Arc::new(move |x, _| table.eval(x));
        reward.fbar_source = FbarSource::Stochastic;
        reward.x_dependent = true;
        reward
    }
}

/// Maximum drawdown `b(s)` tolerated before absorption.
#[derive(Clone)]
pub enum BoundarySpec {
    /// `b(s) = (1 - beta) s`.
    Proportional(f64),
    /// `b(s) = c`.
    Constant(f64),
    /// Absorption only at the floor of the state space: `b(s) = s - floor`.
    NoAbsorption { floor: f64 },
    Custom(ScalarFn),
}

impl fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundarySpec::Proportional(b) => write!(f, "Proportional({b})"),
            BoundarySpec::Constant(c) => write!(f, "Constant({c})"),
            BoundarySpec::NoAbsorption { floor } => write!(f, "NoAbsorption(floor={floor})"),
            BoundarySpec::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl BoundarySpec {
    pub fn proportional(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0, 1), got {beta}")));
        }
        Ok(BoundarySpec::Proportional(beta))
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::InvalidParameter(format!("constant boundary must be >= 0, got {c}")));
        }
        Ok(BoundarySpec::Constant(c))
    }

    pub fn none_for(ss: StateSpace) -> Self {
        BoundarySpec::NoAbsorption { floor: ss.lo }
    }

    pub fn b(&self, s: f64) -> f64 {
        match self {
            BoundarySpec::Proportional(beta) => (1.0 - beta) * s,
            BoundarySpec::Constant(c) => *c,
            BoundarySpec::NoAbsorption { floor } => s - floor,
            BoundarySpec::Custom(b) => b(s),
        }
    }
}

/// Excursion-depth threshold `l(m)`: stop once `S - X >= l(S)`.
#[derive(Clone)]
pub struct Policy {
    l: ScalarFn,
    pub label: String,
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Policy({})", self.label)
    }
}

impl Policy {
    pub fn new(label: &str, l: ScalarFn) -> Self {
        Self { l, label: label.to_string() }
    }

    pub fn l(&self, m: f64) -> f64 {
        (self.l)(m)
    }

    /// Stop at the first moment the drawdown is at least `c`.
    pub fn constant(c: f64) -> Self {
        Self::new(&format!("constant({c})"), Arc::new(move |_| c))
    }

    pub fn immediate() -> Self {
        Self::constant(0.0)
    }

    /// `l(m) = frac * m`, e.g. stop at `x = (1 - frac) m`.
    pub fn proportional(frac: f64) -> Self {
        Self::new(&format!("proportional({frac})"), Arc::new(move |m| frac * m))
    }

    /// Stop the first time `X <= level`: `l(m) = max(m - level, 0)`.
    pub fn stop_level(level: f64) -> Self {
        Self::new(&format!("stop_level({level})"), Arc::new(move |m| (m - level).max(0.0)))
    }

    /// No stopping at any level: the path runs until absorption.
    pub fn never() -> Self {
        Self::new("never", Arc::new(|_| f64::INFINITY))
    }

    /// Stop exactly at the absorbing boundary.
    pub fn at_boundary(boundary: &BoundarySpec) -> Self {
        let b = boundary.clone();
        Self::new("at_boundary", Arc::new(move |m| b.b(m)))
    }

    /// Piecewise-linear interpolation of `(m, l)` nodes, flat outside.
    pub fn tabulated(m: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        if m.is_empty() || m.len() != l.len() || !m.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter("policy table needs strictly increasing nodes".into()));
        }
        Ok(Self::new(
            "tabulated",
            Arc::new(move |x| {
                let n = m.len();
                if x <= m[0] {
                    return l[0];
                }
                if x >= m[n - 1] {
                    return l[n - 1];
                }
                let i = m.partition_point(|&t| t <= x) - 1;
                let w = (x - m[i]) / (m[i + 1] - m[i]);
                l[i] + w * (l[i + 1] - l[i])
            }),
        ))
    }

    /// Check `0 <= l(m) <= b(m)` at the given levels; `l = inf` (never stop) is allowed.
    pub fn validate(&self, boundary: &BoundarySpec, levels: &[f64]) -> Result<()> {
        for &m in levels {
            let l = self.l(m);
            let b = boundary.b(m);
            if !(l >= 0.0 && (l <= b * (1.0 + 1e-12) + 1e-300 || l == f64::INFINITY)) {
                return Err(Error::InvalidParameter(format!("policy threshold l({m})={l} outside [0, {b}]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_gbm;

    #[test]
    fn power_income_potential_satisfies_feynman_kac() {
        let (m, _) = make_gbm(0.05, 0.1, 0.1).unwrap();
        let r = RewardSpec::power_income(&m, 0.5, true).unwrap();
        let pts: Vec<(f64, f64)> = (1..20).map(|i| (i as f64 * 0.5, 10.0)).collect();
        assert!(r.fbar_residual(&m, &pts) < 1e-8);
    }

    #[test]
    fn boundary_kinds() {
        assert!((BoundarySpec::proportional(0.8).unwrap().b(10.0) - 2.0).abs() < 1e-15);
        assert_eq!(BoundarySpec::none_for(StateSpace::positive()).b(3.0), 3.0);
        assert!(BoundarySpec::proportional(1.0).is_err());
    }

    #[test]
    fn tabulated_policy_interpolates() {
        let p = Policy::tabulated(vec![1.0, 2.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(p.l(1.5), 0.5);
        assert_eq!(p.l(5.0), 1.0);
    }
}
