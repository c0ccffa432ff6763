//! Diffusion models, their fundamental solutions and the F-transform.
//!
//! For a diffusion `dX = mu(X) dt + sigma(X) dB` discounted at rate `q`, the
//! equation `(A - q) v = 0` has an increasing positive solution `psi` and a
//! decreasing positive solution `phi`. Their ratio `F = psi / phi` is the
//! coordinate change under which q-excessive functions become concave.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::central_diff;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Open interval `(lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpace {
    pub lo: f64,
    pub hi: f64,
}

impl StateSpace {
    pub fn positive() -> Self {
        Self { lo: 0.0, hi: f64::INFINITY }
    }

    pub fn real_line() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    pub fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { x, lo: self.lo, hi: self.hi })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gbm,
    Abm,
    Custom,
}

#[derive(Clone)]
enum Coefficients {
    Gbm { mu: f64, sigma: f64 },
    Abm { mu: f64, sigma: f64 },
    Custom { drift: ScalarFn, vol: ScalarFn },
}

/// Drift, volatility and discount rate of the underlying process.
#[derive(Clone)]
pub struct DiffusionModel {
    coeffs: Coefficients,
    q: f64,
    state_space: StateSpace,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("DiffusionModel");
        d.field("kind", &self.kind());
        match self.coeffs {
            Coefficients::Gbm { mu, sigma } | Coefficients::Abm { mu, sigma } => {
                d.field("mu", &mu).field("sigma", &sigma);
            }
            Coefficients::Custom { .. } => {}
        }
        d.field("q", &self.q).field("state_space", &self.state_space).finish()
    }
}

impl DiffusionModel {
    pub fn kind(&self) -> ModelKind {
        match self.coeffs {
            Coefficients::Gbm { .. } => ModelKind::Gbm,
            Coefficients::Abm { .. } => ModelKind::Abm,
            Coefficients::Custom { .. } => ModelKind::Custom,
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn state_space(&self) -> StateSpace {
        self.state_space
    }

    /// `(mu, sigma)` for the constant-coefficient kinds.
    pub fn params(&self) -> Option<(f64, f64)> {
        match self.coeffs {
            Coefficients::Gbm { mu, sigma } | Coefficients::Abm { mu, sigma } => Some((mu, sigma)),
            Coefficients::Custom { .. } => None,
        }
    }

    pub fn drift(&self, x: f64) -> f64 {
        match &self.coeffs {
            Coefficients::Gbm { mu, .. } => mu * x,
            Coefficients::Abm { mu, .. } => *mu,
            Coefficients::Custom { drift, .. } => drift(x),
        }
    }

    pub fn vol(&self, x: f64) -> f64 {
        match &self.coeffs {
            Coefficients::Gbm { sigma, .. } => sigma * x,
            Coefficients::Abm { sigma, .. } => *sigma,
            Coefficients::Custom { vol, .. } => vol(x),
        }
    }

    /// `(A - q) v` at `x` given `v`, `v'`, `v''`.
    pub fn generator_residual(&self, x: f64, v: f64, dv: f64, d2v: f64) -> f64 {
        let s = self.vol(x);
        0.5 * s * s * d2v + self.drift(x) * dv - self.q * v
    }
}

/// Caller-supplied closed forms for a diffusion without built-in support.
#[derive(Clone)]
pub struct CustomDiffusion {
    pub psi: ScalarFn,
    pub dpsi: ScalarFn,
    pub d2psi: ScalarFn,
    pub phi: ScalarFn,
    pub dphi: ScalarFn,
    pub d2phi: ScalarFn,
    pub drift: ScalarFn,
    pub vol: ScalarFn,
    pub q: f64,
    pub state_space: StateSpace,
    /// Finite interval used for construction checks and as the initial
    /// bracket when inverting `F`.
    pub bracket: (f64, f64),
}

struct CustomFns {
    psi: ScalarFn,
    dpsi: ScalarFn,
    d2psi: ScalarFn,
    phi: ScalarFn,
    dphi: ScalarFn,
    d2phi: ScalarFn,
    bracket: (f64, f64),
}

#[derive(Clone)]
enum Repr {
    /// `psi = x^g1`, `phi = x^g0`.
    Power { g0: f64, g1: f64 },
    /// `psi = exp(tp x)`, `phi = exp(tm x)`.
    Exp { tm: f64, tp: f64 },
    Custom(Arc<CustomFns>),
}

/// The pair `(psi, phi)` with derivatives, `F = psi/phi`, `F'` and `F^{-1}`.
///
/// The pointwise evaluators do not check the state space; entry points that
/// take user coordinates validate them before evaluating.
#[derive(Clone)]
pub struct FundamentalPair {
    repr: Repr,
    state_space: StateSpace,
}

impl fmt::Debug for FundamentalPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Power { g0, g1 } => write!(f, "FundamentalPair::Power(g0={g0}, g1={g1})"),
            Repr::Exp { tm, tp } => write!(f, "FundamentalPair::Exp(theta-={tm}, theta+={tp})"),
            Repr::Custom(_) => write!(f, "FundamentalPair::Custom({:?})", self.state_space),
        }
    }
}

impl FundamentalPair {
    pub fn state_space(&self) -> StateSpace {
        self.state_space
    }

    /// Exponents `(gamma0, gamma1)` for the power (GBM) family.
    pub fn power_exponents(&self) -> Option<(f64, f64)> {
        match self.repr {
            Repr::Power { g0, g1 } => Some((g0, g1)),
            _ => None,
        }
    }

    /// Rates `(theta-, theta+)` for the exponential (ABM) family.
    pub fn exp_rates(&self) -> Option<(f64, f64)> {
        match self.repr {
            Repr::Exp { tm, tp } => Some((tm, tp)),
            _ => None,
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { g1, .. } => x.powf(*g1),
            Repr::Exp { tp, .. } => (tp * x).exp(),
            Repr::Custom(c) => (c.psi)(x),
        }
    }

    pub fn dpsi(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { g1, .. } => g1 * x.powf(g1 - 1.0),
            Repr::Exp { tp, .. } => tp * (tp * x).exp(),
            Repr::Custom(c) => (c.dpsi)(x),
        }
    }

    pub fn d2psi(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { g1, .. } => g1 * (g1 - 1.0) * x.powf(g1 - 2.0),
            Repr::Exp { tp, .. } => tp * tp * (tp * x).exp(),
            Repr::Custom(c) => (c.d2psi)(x),
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { g0, .. } => x.powf(*g0),
            Repr::Exp { tm, .. } => (tm * x).exp(),
            Repr::Custom(c) => (c.phi)(x),
        }
    }

    pub fn dphi(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { g0, .. } => g0 * x.powf(g0 - 1.0),
            Repr::Exp { tm, .. } => tm * (tm * x).exp(),
            Repr::Custom(c) => (c.dphi)(x),
        }
    }

    pub fn d2phi(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { g0, .. } => g0 * (g0 - 1.0) * x.powf(g0 - 2.0),
            Repr::Exp { tm, .. } => tm * tm * (tm * x).exp(),
            Repr::Custom(c) => (c.d2phi)(x),
        }
    }

    /// `phi(a) / phi(b)` without forming either factor when a closed form allows.
    pub fn phi_ratio(&self, a: f64, b: f64) -> f64 {
        match &self.repr {
            Repr::Power { g0, .. } => (a / b).powf(*g0),
            Repr::Exp { tm, .. } => (tm * (a - b)).exp(),
            Repr::Custom(c) => (c.phi)(a) / (c.phi)(b),
        }
    }

    pub fn f(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { g0, g1 } => x.powf(g1 - g0),
            Repr::Exp { tm, tp } => ((tp - tm) * x).exp(),
            Repr::Custom(c) => (c.psi)(x) / (c.phi)(x),
        }
    }

    pub fn df(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { g0, g1 } => {
                let d = g1 - g0;
                d * x.powf(d - 1.0)
            }
            Repr::Exp { tm, tp } => (tp - tm) * ((tp - tm) * x).exp(),
            Repr::Custom(c) => {
                let p = (c.phi)(x);
                ((c.dpsi)(x) * p - (c.psi)(x) * (c.dphi)(x)) / (p * p)
            }
        }
    }

    /// Inverse of `F`. Closed form for GBM/ABM, bisection otherwise; NaN when
    /// `y` is not in the range of `F`.
    pub fn f_inv(&self, y: f64) -> f64 {
        match &self.repr {
            Repr::Power { g0, g1 } => {
                if y < 0.0 {
                    f64::NAN
                } else {
                    y.powf(1.0 / (g1 - g0))
                }
            }
            Repr::Exp { tm, tp } => y.ln() / (tp - tm),
            Repr::Custom(c) => self.custom_f_inv(c, y),
        }
    }

    fn custom_f_inv(&self, c: &CustomFns, y: f64) -> f64 {
        let f = |x: f64| (c.psi)(x) / (c.phi)(x);
        let ss = self.state_space;
        let (mut a, mut b) = c.bracket;
        let mut grow = 0;
        while f(a) > y && grow < 200 {
            let w = b - a;
            a = if ss.lo.is_finite() { ss.lo + 0.5 * (a - ss.lo) } else { a - w };
            grow += 1;
        }
        while f(b) < y && grow < 400 {
            let w = b - a;
            b = if ss.hi.is_finite() { ss.hi - 0.5 * (ss.hi - b) } else { b + w };
            grow += 1;
        }
        if !(f(a) <= y && f(b) >= y) {
            return f64::NAN;
        }
        for _ in 0..400 {
            let m = 0.5 * (a + b);
            if f(m) < y {
                a = m;
            } else {
                b = m;
            }
            if b - a <= 1e-13 * m.abs().max(1e-300) {
                break;
            }
        }
        0.5 * (a + b)
    }

    /// Closed-form `F` and `F^{-1}` exist (no bisection needed).
    pub fn is_closed_form(&self) -> bool {
        !matches!(self.repr, Repr::Custom(_))
    }
}

/// Roots `(r-, r+)` of `a r^2 + b r + c = 0`, computed without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * a * c;
    if !(disc >= 0.0) {
        return None;
    }
    let sq = disc.sqrt();
    let t = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if t == 0.0 { (0.0, 0.0) } else { (t / a, c / t) };
    Some((r1.min(r2), r1.max(r2)))
}

/// Geometric Brownian motion `dX = mu X dt + sigma X dB` on `(0, inf)`.
pub fn make_gbm(mu: f64, sigma: f64, q: f64) -> Result<(DiffusionModel, FundamentalPair)> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonpositiveSigma(sigma));
    }
    if !(q >= 0.0) {
        return Err(Error::DegenerateRoots(format!("discount rate must be nonnegative, got {q}")));
    }
    let half = 0.5 * sigma * sigma;
    let (g0, g1) = quadratic_roots(half, mu - half, -q)
        .ok_or_else(|| Error::DegenerateRoots("no real roots".into()))?;
    if !(g0 < 0.0 && g1 > 0.0) {
        return Err(Error::DegenerateRoots(format!(
            "need gamma0 < 0 < gamma1, got gamma0={g0}, gamma1={g1}"
        )));
    }
    let ss = StateSpace::positive();
    Ok((
        DiffusionModel { coeffs: Coefficients::Gbm { mu, sigma }, q, state_space: ss },
        FundamentalPair { repr: Repr::Power { g0, g1 }, state_space: ss },
    ))
}

/// Arithmetic Brownian motion `dX = mu dt + sigma dB` on the real line.
pub fn make_abm(mu: f64, sigma: f64, q: f64) -> Result<(DiffusionModel, FundamentalPair)> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonpositiveSigma(sigma));
    }
    if !(q > 0.0) {
        return Err(Error::DegenerateRoots(format!("discount rate must be positive, got {q}")));
    }
    let (tm, tp) = quadratic_roots(0.5 * sigma * sigma, mu, -q)
        .ok_or_else(|| Error::DegenerateRoots("no real roots".into()))?;
    let ss = StateSpace::real_line();
    Ok((
        DiffusionModel { coeffs: Coefficients::Abm { mu, sigma }, q, state_space: ss },
        FundamentalPair { repr: Repr::Exp { tm, tp }, state_space: ss },
    ))
}

const CHECK_SAMPLES: usize = 64;

/// Wrap caller-supplied fundamental solutions after validating them on a
/// sample grid inside `spec.bracket`.
///
/// Checks run in order: monotonicity of `F`, finite-difference consistency of
/// the supplied derivatives (1e-5 relative), sign conditions, and the
/// generator residual.
pub fn make_custom(spec: CustomDiffusion) -> Result<(DiffusionModel, FundamentalPair)> {
    let (a, b) = spec.bracket;
    let ss = spec.state_space;
    if !(a < b) || !ss.contains(a) || !ss.contains(b) {
        return Err(Error::InvalidFundamental(format!("bracket ({a}, {b}) must be inside {ss:?}")));
    }
    let xs: Vec<f64> = (0..CHECK_SAMPLES)
        .map(|i| a + (b - a) * i as f64 / (CHECK_SAMPLES - 1) as f64)
        .collect();

    let f = |x: f64| (spec.psi)(x) / (spec.phi)(x);
    for w in xs.windows(2) {
        if !(f(w[0]) < f(w[1])) {
            return Err(Error::NonmonotoneF(w[0]));
        }
    }

    let h = 1e-3 * (b - a) / CHECK_SAMPLES as f64;
    let pairs: [(&'static str, &ScalarFn, &ScalarFn); 4] = [
        ("dpsi", &spec.psi, &spec.dpsi),
        ("d2psi", &spec.dpsi, &spec.d2psi),
        ("dphi", &spec.phi, &spec.dphi),
        ("d2phi", &spec.dphi, &spec.d2phi),
    ];
    for &x in &xs[1..xs.len() - 1] {
        for (name, base, deriv) in pairs.iter() {
            let fd = central_diff(|t| base(t), x, h);
            let given = deriv(x);
            let scale = given.abs().max(fd.abs()).max(1e-300);
            let rel = (fd - given).abs() / scale;
            if !(rel <= 1e-5) {
                return Err(Error::InconsistentDerivatives { name, x, rel });
            }
        }
    }

    for &x in &xs {
        let (p, dp, ph, dph) = ((spec.psi)(x), (spec.dpsi)(x), (spec.phi)(x), (spec.dphi)(x));
        if !(p > 0.0 && ph > 0.0 && dp > 0.0 && dph < 0.0) {
            return Err(Error::InvalidFundamental(format!(
                "need psi>0, phi>0, psi'>0, phi'<0 at x={x}; got {p}, {ph}, {dp}, {dph}"
            )));
        }
    }

    let model = DiffusionModel {
        coeffs: Coefficients::Custom { drift: spec.drift.clone(), vol: spec.vol.clone() },
        q: spec.q,
        state_space: ss,
    };
    for &x in &xs {
        for (name, v, dv, d2v) in [
            ("psi", &spec.psi, &spec.dpsi, &spec.d2psi),
            ("phi", &spec.phi, &spec.dphi, &spec.d2phi),
        ] {
            let val = v(x);
            let res = model.generator_residual(x, val, dv(x), d2v(x));
            let s = model.vol(x);
            let scale = val.abs() * spec.q.max(1e-300)
                + (0.5 * s * s * d2v(x)).abs()
                + (model.drift(x) * dv(x)).abs();
            let rel = res.abs() / scale.max(1e-300);
            if !(rel <= 1e-6) {
                return Err(Error::InconsistentDerivatives { name, x, rel });
            }
        }
    }

    let fp = FundamentalPair {
        repr: Repr::Custom(Arc::new(CustomFns {
            psi: spec.psi,
            dpsi: spec.dpsi,
            d2psi: spec.d2psi,
            phi: spec.phi,
            dphi: spec.dphi,
            d2phi: spec.d2phi,
            bracket: spec.bracket,
        })),
        state_space: ss,
    };
    Ok((model, fp))
}

impl FundamentalPair {
    /// Build a custom pair without validation. Intended for limiting cases
    /// such as a driftless undiscounted process in natural scale (`phi = 1`),
    /// which the strict checks in [`make_custom`] reject.
    pub fn custom_unchecked(
        psi: ScalarFn,
        dpsi: ScalarFn,
        d2psi: ScalarFn,
        phi: ScalarFn,
        dphi: ScalarFn,
        d2phi: ScalarFn,
        state_space: StateSpace,
        bracket: (f64, f64),
    ) -> Self {
        FundamentalPair {
            repr: Repr::Custom(Arc::new(CustomFns { psi, dpsi, d2psi, phi, dphi, d2phi, bracket })),
            state_space,
        }
    }
}

/// `E_x[exp(-q tau_z)]`: `psi(x)/psi(z)` for `x <= z`, else `phi(x)/phi(z)`.
pub fn hitting_laplace(fp: &FundamentalPair, x: f64, z: f64) -> Result<f64> {
    let ss = fp.state_space();
    ss.check(x)?;
    ss.check(z)?;
    if x == z {
        return Ok(1.0);
    }
    Ok(match fp.repr {
        Repr::Power { g0, g1 } => (x / z).powf(if x < z { g1 } else { g0 }),
        Repr::Exp { tm, tp } => ((if x < z { tp } else { tm }) * (x - z)).exp(),
        Repr::Custom(_) => {
            if x < z {
                fp.psi(x) / fp.psi(z)
            } else {
                fp.phi(x) / fp.phi(z)
            }
        }
    })
}

/// `Z(y) = (z / phi)(F^{-1}(y))` on `[F(c), F(d)]`.
#[derive(Clone)]
pub struct TransformedFunction {
    fp: FundamentalPair,
    z: ScalarFn,
    pub c: f64,
    pub d: f64,
}

impl TransformedFunction {
    pub fn domain(&self) -> (f64, f64) {
        (self.fp.f(self.c), self.fp.f(self.d))
    }

    pub fn eval(&self, y: f64) -> Result<f64> {
        let (ya, yb) = self.domain();
        let slack = 1e-12 * (yb - ya).abs().max(yb.abs());
        if !(y >= ya - slack && y <= yb + slack) {
            return Err(Error::OutOfDomain { x: y, lo: ya, hi: yb });
        }
        let x = self.fp.f_inv(y).clamp(self.c, self.d);
        Ok((self.z)(x) / self.fp.phi(x))
    }

    /// `dZ/dy` at `y = F(x)`, i.e. `(z/phi)'(x) / F'(x)`.
    pub fn slope_at(&self, x: f64) -> Result<f64> {
        if !(x >= self.c && x <= self.d) {
            return Err(Error::OutOfDomain { x, lo: self.c, hi: self.d });
        }
        let g = |t: f64| (self.z)(t) / self.fp.phi(t);
        let h = 1e-3 * (self.d - self.c);
        let ss = self.fp.state_space();
        let room = (x - ss.lo).min(ss.hi - x);
        let h = h.min(0.2 * room);
        Ok(central_diff(g, x, h) / self.fp.df(x))
    }
}

pub fn to_transformed(fp: &FundamentalPair, z: ScalarFn, c: f64, d: f64) -> Result<TransformedFunction> {
    let ss = fp.state_space();
    ss.check(c)?;
    ss.check(d)?;
    if !(c < d) {
        return Err(Error::InvalidParameter(format!("need c < d, got c={c}, d={d}")));
    }
    Ok(TransformedFunction { fp: fp.clone(), z, c, d })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_roots_are_ordered() {
        let (a, b) = quadratic_roots(1.0, -3.0, 2.0).unwrap();
        assert_eq!((a, b), (1.0, 2.0));
        assert!(quadratic_roots(1.0, 0.0, 1.0).is_none());
    }

    #[test]
    fn gbm_endpoint_is_out_of_domain() {
        let (_, fp) = make_gbm(0.05, 0.25, 0.15).unwrap();
        assert!(matches!(hitting_laplace(&fp, 0.0, 1.0), Err(Error::OutOfDomain { .. })));
    }
}
