//! Gauss–Kronrod (7, 15) rules and a globally adaptive integrator.

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// The 15 Kronrod abscissae mapped onto `[a, b]`, in increasing order.
pub fn gk15_nodes(a: f64, b: f64) -> [f64; 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [0.0; 15];
    for j in 0..7 {
        out[j] = c - h * XGK[j];
        out[14 - j] = c + h * XGK[j];
    }
    out[7] = c;
    out
}

/// Combine integrand values at [`gk15_nodes`] into (Kronrod estimate, error estimate).
pub fn gk15_combine(a: f64, b: f64, vals: &[f64; 15]) -> (f64, f64) {
    let h = 0.5 * (b - a);
    let mut k = WGK[7] * vals[7];
    let mut g = WG[3] * vals[7];
    for j in 0..7 {
        let pair = vals[j] + vals[14 - j];
        k += WGK[j] * pair;
        if j % 2 == 1 {
            g += WG[j / 2] * pair;
        }
    }
    (k * h, ((k - g) * h).abs())
}

pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let nodes = gk15_nodes(a, b);
    let mut vals = [0.0; 15];
    for (v, &x) in vals.iter_mut().zip(nodes.iter()) {
        *v = f(x);
    }
    gk15_combine(a, b, &vals)
}

/// Tolerances for adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { abs_tol: 1e-9, rel_tol: 1e-10, max_subdivisions: 20_000 }
    }
}

/// Globally adaptive integration: repeatedly bisect the panel with the
/// largest error estimate. Returns `(value, error_estimate)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: QuadratureSpec) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (v, e) = gk15(&f, a, b);
    panels.push((a, b, v, e));
    let mut total = v;
    let mut err = e;
    while err > spec.abs_tol.max(spec.rel_tol * total.abs()) && panels.len() < spec.max_subdivisions {
        let (idx, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (pa, pb, pv, pe) = panels.swap_remove(idx);
        let m = 0.5 * (pa + pb);
        if m <= pa || m >= pb {
            panels.push((pa, pb, pv, 0.0));
            err -= pe;
            continue;
        }
        let (v1, e1) = gk15(&f, pa, m);
        let (v2, e2) = gk15(&f, m, pb);
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        panels.push((pa, m, v1, e1));
        panels.push((m, pb, v2, e2));
    }
    // Re-sum to shed accumulated cancellation in the running totals.
    let total: f64 = panels.iter().map(|p| p.2).sum();
    let err: f64 = panels.iter().map(|p| p.3).sum();
    (total, err)
}
