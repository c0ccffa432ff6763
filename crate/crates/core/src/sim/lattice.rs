//! Markov-chain approximation of `(X, S)` on a uniform lattice.
//!
//! Within a row of fixed maximum `s` the chain moves one cell up or down (or
//! stays); an up move from the diagonal enters the next row's diagonal. Rows
//! are therefore solved from the top down, each one an obstacle problem on a
//! tridiagonal chain, handled exactly by policy iteration. The top row
//! reflects at the diagonal.

use crate::diffusion::DiffusionModel;
use crate::reward::{BoundarySpec, RewardSpec};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LatticeDPResult {
    pub x_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    /// `v_dp[j][i]` at `(x_grid[i], s_grid[j])`; NaN off the feasible set.
    pub v_dp: Vec<Vec<f64>>,
    pub stop_set: Vec<Vec<bool>>,
    pub dx: f64,
    pub dt: f64,
    /// Largest `|V - max(g, continuation)|` over all lattice cells.
    pub bellman_residual: f64,
}

impl LatticeDPResult {
    /// Lowest stopping cell in row `j` above the absorption edge, if any.
    pub fn stop_boundary(&self, j: usize) -> Option<f64> {
        let row = &self.stop_set[j];
        let vals = &self.v_dp[j];
        (0..row.len()).find(|&i| !vals[i].is_nan() && !row[i]).and_then(|first_cont| {
            (0..first_cont).rev().find(|&i| row[i] && !vals[i].is_nan()).map(|i| self.x_grid[i])
        })
    }
}

/// Largest time step keeping every transition probability nonnegative for
/// states in `[x_lo, x_hi]`.
pub fn max_stable_dt(model: &DiffusionModel, x_lo: f64, x_hi: f64, dx: f64) -> f64 {
    let n = 400;
    let mut dt = f64::INFINITY;
    for k in 0..=n {
        let x = x_lo + (x_hi - x_lo) * k as f64 / n as f64;
        let s = model.vol(x);
        let rate = s * s + dx * model.drift(x).abs();
        if rate > 0.0 {
            dt = dt.min(dx * dx / rate);
        }
    }
    dt
}

fn regular_step(grid: &[f64], name: &str) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::InvalidParameter(format!("{name} needs at least two points")));
    }
    let d = grid[1] - grid[0];
    if !(d > 0.0) {
        return Err(Error::InvalidParameter(format!("{name} must be increasing")));
    }
    for w in grid.windows(2) {
        if ((w[1] - w[0]) - d).abs() > 1e-9 * d {
            return Err(Error::InvalidParameter(format!("{name} must be regular")));
        }
    }
    Ok(d)
}

struct Lattice {
    x0: f64,
    dx: f64,
}

impl Lattice {
    fn x(&self, i: i64) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    fn index(&self, x: f64) -> Option<i64> {
        let r = (x - self.x0) / self.dx;
        let i = r.round();
        ((r - i).abs() < 1e-6).then_some(i as i64)
    }
}

/// Solve a tridiagonal system in place (Thomas algorithm).
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64]) {
    let n = d.len();
    let mut cp = vec![0.0; n];
    let mut beta = b[0];
    d[0] /= beta;
    for i in 1..n {
        cp[i - 1] = c[i - 1] / beta;
        beta = b[i] - a[i] * cp[i - 1];
        d[i] = (d[i] - a[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= cp[i] * d[i + 1];
    }
}

/// Dynamic-programming value of the gross problem (income plus stopping
/// reward, absorption payoff per the reward's convention) on the lattice
/// spanned by `x_grid`'s spacing. Rows run from `min(s_grid)` to
/// `max(s_grid)`; values are reported at the grid points.
pub fn lattice_dp(
    model: &DiffusionModel,
    reward: &RewardSpec,
    boundary: &BoundarySpec,
    x_grid: &[f64],
    s_grid: &[f64],
    dt: f64,
) -> Result<LatticeDPResult> {
    if !(dt > 0.0) {
        return Err(Error::NonpositiveDt(dt));
    }
    let dx = regular_step(x_grid, "x_grid")?;
    if s_grid.is_empty() || !s_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter("s_grid must be increasing".into()));
    }
    let lat = Lattice { x0: x_grid[0], dx };
    let j_of = |s: f64| {
        lat.index(s).ok_or_else(|| Error::InvalidParameter(format!("s={s} is not on the x lattice")))
    };
    let j_rows: Vec<i64> = s_grid.iter().map(|&s| j_of(s)).collect::<Result<_>>()?;
    let (j_bot, j_top) = (j_rows[0], *j_rows.last().unwrap());
    let lo = model.state_space().lo;
    let q = model.q();
    let disc = (-q * dt).exp();
    let one_minus_disc = -(-q * dt).exp_m1();

    let mut v_dp = vec![vec![f64::NAN; x_grid.len()]; s_grid.len()];
    let mut stop_set = vec![vec![false; x_grid.len()]; s_grid.len()];
    let mut next_diag: Option<f64> = None;
    let mut residual: f64 = 0.0;
    let mut report = s_grid.len();
    let mut prev_stop: Vec<bool> = Vec::new();
    let mut prev_lo = 0i64;

    for j in (j_bot..=j_top).rev() {
        let s = lat.x(j);
        let b = boundary.b(s);
        let edge = (s - b).max(lo);
        let mut i_lo = ((edge - lat.x0) / dx - 1e-9).ceil() as i64;
        while lat.x(i_lo) <= lo {
            i_lo += 1;
        }
        let i_lo = i_lo.min(j);
        let n = (j - i_lo + 1) as usize;
        let xs: Vec<f64> = (0..n).map(|k| lat.x(i_lo + k as i64)).collect();
        // Boundary node sits exactly on the absorption edge. A path there can
        // still stop, and is absorbed immediately otherwise; the floor of the
        // state space is never reached and just pays the absorption value.
        let h_bot = (xs[0] - edge).min(dx);
        let on_edge = edge > lo && h_bot < 1e-9 * dx;
        let edge = if on_edge { xs[0] } else { edge };
        let edge_value = if edge <= lo {
            reward.absorption_payoff(edge, s)
        } else {
            (reward.g)(edge, s).max(reward.absorption_payoff(edge, s))
        };

        let g: Vec<f64> = xs.iter().map(|&x| (reward.g)(x, s)).collect();
        let inc: Vec<f64> = xs.iter().map(|&x| (reward.f)(x, s) * dt).collect();
        let mut pu = vec![0.0; n];
        let mut pd = vec![0.0; n];
        for k in 0..n {
            let x = xs[k];
            let sig2 = model.vol(x).powi(2);
            let mu = model.drift(x);
            if sig2 * dt + dx * mu.abs() * dt > dx * dx * (1.0 + 1e-12) {
                return Err(Error::UnstableScheme(format!(
                    "dt={dt} too large for dx={dx} at x={x}; need dt <= {}",
                    dx * dx / (sig2 + dx * mu.abs())
                )));
            }
            let hm = if k == 0 { h_bot.max(1e-300) } else { dx };
            pu[k] = dt * (sig2 / (dx * (hm + dx)) + mu.max(0.0) / dx);
            pd[k] = dt * (sig2 / (hm * (hm + dx)) + (-mu).max(0.0) / hm);
        }
        let diag_up = next_diag;
        // One embedded step of the chain with the holding time factored out:
        //   V_k (1 - e^{-q dt} + e^{-q dt}(pu + pd)) = e^{-q dt}(pu V_up + pd V_down) + f dt.
        let up_weight = |k: usize| if k + 1 == n && diag_up.is_none() { 0.0 } else { pu[k] };
        let cont = |v: &[f64], k: usize| -> f64 {
            let down = if k == 0 { edge_value } else { v[k - 1] };
            let up = if k + 1 < n { v[k + 1] } else { diag_up.unwrap_or(v[k]) };
            let pw = up_weight(k);
            (disc * (pw * up + pd[k] * down) + inc[k]) / (one_minus_disc + disc * (pw + pd[k]))
        };
        let fixed = |k: usize| k == 0 && on_edge;

        // Warm start from the row above: free boundaries move little between rows.
        let mut stop: Vec<bool> = (0..n)
            .map(|k| {
                let i = i_lo + k as i64;
                i >= prev_lo && ((i - prev_lo) as usize) < prev_stop.len() && prev_stop[(i - prev_lo) as usize]
            })
            .collect();
        let mut v = vec![0.0; n];
        let (mut a, mut bb, mut c, mut d) = (vec![0.0; n], vec![1.0; n], vec![0.0; n], vec![0.0; n]);
        for _ in 0..(n + 5) {
            for k in 0..n {
                a[k] = 0.0;
                bb[k] = 1.0;
                c[k] = 0.0;
                if fixed(k) {
                    d[k] = edge_value;
                    continue;
                }
                if stop[k] {
                    d[k] = g[k];
                    continue;
                }
                let pw = up_weight(k);
                bb[k] = one_minus_disc + disc * (pw + pd[k]);
                d[k] = inc[k];
                if k == 0 {
                    d[k] += disc * pd[k] * edge_value;
                } else {
                    a[k] = -disc * pd[k];
                }
                if k + 1 < n {
                    c[k] = -disc * pw;
                } else if let Some(up) = diag_up {
                    d[k] += disc * pw * up;
                }
            }
            thomas(&a, &bb, &c, &mut d);
            v.copy_from_slice(&d);
            let mut changed = false;
            for k in 0..n {
                if fixed(k) {
                    stop[k] = edge_value <= g[k];
                    continue;
                }
                let want = g[k] >= cont(&v, k);
                // Switch only on strict improvement so the iteration cannot cycle.
                if want != stop[k] && !(want && g[k] <= v[k]) {
                    stop[k] = want;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for k in 0..n {
            let target = if fixed(k) { edge_value } else { g[k].max(cont(&v, k)) };
            residual = residual.max((v[k] - target).abs() / (1.0 + v[k].abs()));
        }
        next_diag = Some(v[n - 1]);
        prev_lo = i_lo;

        while report > 0 && j_rows[report - 1] > j {
            report -= 1;
        }
        if report > 0 && j_rows[report - 1] == j {
            let row = report - 1;
            for (i, &x) in x_grid.iter().enumerate() {
                if let Some(ix) = lat.index(x) {
                    if ix >= i_lo && ix <= j {
                        let k = (ix - i_lo) as usize;
                        v_dp[row][i] = v[k];
                        stop_set[row][i] = stop[k];
                    }
                }
            }
        }
        prev_stop = stop;
    }
    Ok(LatticeDPResult {
        x_grid: x_grid.to_vec(),
        s_grid: s_grid.to_vec(),
        v_dp,
        stop_set,
        dx,
        dt,
        bellman_residual: residual,
    })
}
