//! Scalar numerics shared by the solvers: bounded maximization, root
//! bracketing, finite-difference derivatives and monotone interpolation.

/// Options for [`maximize_scalar`].
#[derive(Debug, Clone, Copy)]
pub struct MaxOptions {
    /// Number of equally spaced points in the initial scan, endpoints included.
    pub scan_points: usize,
    /// Golden-section stops when the bracket is narrower than `xtol_rel * (b - a)`.
    pub xtol_rel: f64,
}

impl Default for MaxOptions {
    fn default() -> Self {
        Self { scan_points: 256, xtol_rel: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxResult {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximize `f` on `[a, b]`.
///
/// A coarse scan locates the best cell, golden-section search narrows it, and
/// two parabolic steps with shrinking stencils polish the argmax (golden
/// section alone only resolves a smooth maximum to about `sqrt(eps)`).
/// Among equal values the smaller abscissa wins. NaN counts as `-inf`.
pub fn maximize_scalar<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: MaxOptions) -> MaxResult {
    let mut evals = 0usize;
    let mut eval = |x: f64| {
        evals += 1;
        sanitize(f(x))
    };
    if !(b > a) {
        let v = eval(a);
        return MaxResult { x: a, value: v, evaluations: evals };
    }
    let n = opts.scan_points.max(3);
    let step = (b - a) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n)
        .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
        .collect();
    let vals: Vec<f64> = xs.iter().map(|&x| eval(x)).collect();
    let mut ib = 0;
    for i in 1..n {
        if vals[i] > vals[ib] {
            ib = i;
        }
    }
    let (mut best_x, mut best_v) = (xs[ib], vals[ib]);
    if best_v == f64::NEG_INFINITY {
        return MaxResult { x: best_x, value: best_v, evaluations: evals };
    }

    let mut lo = xs[ib.saturating_sub(1)];
    let mut hi = xs[(ib + 1).min(n - 1)];
    let tol = opts.xtol_rel * (b - a);
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - invphi * (hi - lo);
    let mut d = lo + invphi * (hi - lo);
    let mut fc = eval(c);
    let mut fd = eval(d);
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - invphi * (hi - lo);
            fc = eval(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + invphi * (hi - lo);
            fd = eval(d);
        }
    }
    let (gx, gv) = if fc >= fd { (c, fc) } else { (d, fd) };
    if gv > best_v || (gv == best_v && gx < best_x) {
        best_x = gx;
        best_v = gv;
    }

    let noise = 8.0 * f64::EPSILON;
    for h_rel in [1e-4, 1e-6] {
        let h = h_rel * (b - a);
        if best_x - h < a || best_x + h > b {
            continue;
        }
        let fl = eval(best_x - h);
        let fr = eval(best_x + h);
        let curv = fl - 2.0 * best_v + fr;
        if !(curv < 0.0) || !fl.is_finite() || !fr.is_finite() {
            continue;
        }
        let delta = -0.5 * h * (fr - fl) / curv;
        if delta.abs() > 2.0 * h {
            continue;
        }
        let xn = (best_x + delta).clamp(a, b);
        let vn = eval(xn);
        if vn >= best_v - noise * best_v.abs() {
            best_x = xn;
            best_v = vn.max(best_v);
        }
    }
    MaxResult { x: best_x, value: best_v, evaluations: evals }
}

/// Brent's method on a sign-changing bracket. Returns `None` when `f(a)` and
/// `f(b)` have the same strict sign.
pub fn brent_root<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> Option<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Some(b)
}

/// Bisection on a sign change of `f`, run until the bracket stops shrinking.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, max_iter: usize) -> Option<f64> {
    let fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let neg_left = fa < 0.0;
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if (fm < 0.0) == neg_left {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Central difference with two levels of Richardson extrapolation.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let (d1, d2, d3) = (d(h), d(h / 2.0), d(h / 4.0));
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

/// One-sided derivative from the right (`h > 0`) or the left (`h < 0`).
pub fn one_sided_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let f0 = f(x);
    let d = |h: f64| (-3.0 * f0 + 4.0 * f(x + h) - f(x + 2.0 * h)) / (2.0 * h);
    let (d1, d2) = (d(h), d(h / 2.0));
    (4.0 * d2 - d1) / 3.0
}

/// Second central difference with one Richardson level.
pub fn second_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let f0 = f(x);
    let d = |h: f64| (f(x + h) - 2.0 * f0 + f(x - h)) / (h * h);
    let (d1, d2) = (d(h), d(h / 2.0));
    (4.0 * d2 - d1) / 3.0
}

/// Monotone piecewise-cubic Hermite slopes (Fritsch–Carlson).
pub fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    if n == 2 {
        return vec![del[0], del[0]];
    }
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if del[i - 1] * del[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let w1 = 2.0 * h1 + h0;
            let w2 = h1 + 2.0 * h0;
            m[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let mut s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            s = 0.0;
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            s = 3.0 * d0;
        }
        s
    };
    m[0] = end(x[1] - x[0], x[2] - x[1], del[0], del[1]);
    m[n - 1] = end(x[n - 1] - x[n - 2], x[n - 2] - x[n - 3], del[n - 2], del[n - 3]);
    m
}

/// Evaluate a cubic Hermite segment on `[x0, x1]`.
pub fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, m0: f64, m1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * m1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximize_quadratic() {
        let r = maximize_scalar(|x| -(x - 0.3).powi(2), 0.0, 1.0, MaxOptions::default());
        assert!((r.x - 0.3).abs() < 1e-10, "{}", r.x);
    }

    #[test]
    fn maximize_prefers_left_on_plateau() {
        let r = maximize_scalar(|_| 1.0, 2.0, 5.0, MaxOptions::default());
        assert_eq!(r.x, 2.0);
    }

    #[test]
    fn maximize_endpoint() {
        let r = maximize_scalar(|x| x, 0.0, 3.0, MaxOptions::default());
        assert_eq!(r.x, 3.0);
    }

    #[test]
    fn maximize_multimodal_picks_global() {
        let f = |x: f64| (-(x - 0.1).powi(2) / 1e-4).exp() + 2.0 * (-(x - 0.8).powi(2) / 1e-4).exp();
        let r = maximize_scalar(f, 0.0, 1.0, MaxOptions::default());
        assert!((r.x - 0.8).abs() < 1e-8);
    }

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent_root(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14, 200).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
        assert!(brent_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 100).is_none());
    }

    #[test]
    fn bisect_matches_brent() {
        let r = bisect(|x| x.cos() - x, 0.0, 1.0, 200).unwrap();
        assert!((r.cos() - r).abs() < 1e-15);
    }

    #[test]
    fn derivatives_of_exp() {
        let d = central_diff(f64::exp, 1.0, 1e-2);
        assert!((d - 1f64.exp()).abs() < 1e-11);
        let r = one_sided_diff(f64::exp, 1.0, 1e-4);
        let l = one_sided_diff(f64::exp, 1.0, -1e-4);
        assert!((r - 1f64.exp()).abs() < 1e-7 && (l - 1f64.exp()).abs() < 1e-7);
        let s = second_diff(f64::exp, 1.0, 1e-3);
        assert!((s - 1f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn pchip_reproduces_line() {
        let x = [0.0, 1.0, 3.0, 4.0];
        let y = [1.0, 3.0, 7.0, 9.0];
        let m = pchip_slopes(&x, &y);
        let v = hermite(x[1], x[2], y[1], y[2], m[1], m[2], 2.0);
        assert!((v - 5.0).abs() < 1e-12);
    }
}
