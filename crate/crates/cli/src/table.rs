//! Net rewards tabulated on a rectangular `(x, s)` grid.

use std::path::Path;
use std::sync::Arc;

use excursion_core::reward::RewardSpec;

use crate::config::ConfigError;

/// Bilinear interpolant over the full product of its `x` and `s` nodes.
/// Points outside the table are clamped to its edge.
#[derive(Debug, Clone)]
pub struct RewardTable {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    /// `h[j][i]` at `(x[i], s[j])`.
    pub h: Vec<Vec<f64>>,
}

fn bracket(nodes: &[f64], v: f64) -> (usize, f64) {
    if nodes.len() == 1 {
        return (0, 0.0);
    }
    let v = v.clamp(nodes[0], nodes[nodes.len() - 1]);
    let i = (nodes.partition_point(|&t| t <= v).max(1) - 1).min(nodes.len() - 2);
    (i, (v - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

impl RewardTable {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let io = |msg: String| ConfigError::Io { path: path.display().to_string(), msg };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| io(e.to_string()))?;
        let headers = rdr.headers().map_err(|e| io(e.to_string()))?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| io(format!("missing column {name}")))
        };
        let (cx, cs, ch) = (col("x")?, col("s")?, col("h")?);
        let mut pts = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| io(e.to_string()))?;
            let num = |c: usize| -> Result<f64, ConfigError> {
                let t = rec.get(c).unwrap_or("");
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| io(format!("row {}: bad number `{t}`", n + 2)))
            };
            pts.push((num(cx)?, num(cs)?, num(ch)?));
        }
        Self::from_points(&pts).map_err(io)
    }

    pub fn from_points(pts: &[(f64, f64, f64)]) -> Result<Self, String> {
        let mut x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let mut s: Vec<f64> = pts.iter().map(|p| p.1).collect();
        x.sort_by(f64::total_cmp);
        x.dedup();
        s.sort_by(f64::total_cmp);
        s.dedup();
        if x.len() < 2 {
            return Err("table needs at least two distinct x values".into());
        }
        if x.len() * s.len() != pts.len() {
            return Err(format!(
                "table must cover the full {}x{} grid exactly once, got {} rows",
                x.len(),
                s.len(),
                pts.len()
            ));
        }
        let mut h = vec![vec![f64::NAN; x.len()]; s.len()];
        for &(px, ps, ph) in pts {
            let i = x.partition_point(|&t| t < px);
            let j = s.partition_point(|&t| t < ps);
            if !h[j][i].is_nan() {
                return Err(format!("duplicate point ({px}, {ps})"));
            }
            h[j][i] = ph;
        }
        Ok(Self { x, s, h })
    }

    pub fn eval(&self, x: f64, s: f64) -> f64 {
        let (i, tx) = bracket(&self.x, x);
        let (j, ts) = bracket(&self.s, s);
        let row = |j: usize| self.h[j][i] * (1.0 - tx) + self.h[j][i + 1] * tx;
        if self.s.len() == 1 {
            row(0)
        } else {
            row(j) * (1.0 - ts) + row(j + 1) * ts
        }
    }

    fn varies_in_s(&self) -> bool {
        self.h.iter().any(|r| r != &self.h[0])
    }

    pub fn into_reward(self, label: &str) -> RewardSpec {
        let s_dep = self.varies_in_s();
        let t = Arc::new(self);
        RewardSpec::terminal(label, Arc::new(move |x, s| t.eval(x, s)), true, s_dep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_is_exact_on_bilinear_data() {
        let f = |x: f64, s: f64| 1.0 + 2.0 * x - s + 0.5 * x * s;
        let mut pts = Vec::new();
        for &s in &[1.0, 2.0, 4.0] {
            for &x in &[0.0, 1.0, 3.0] {
                pts.push((x, s, f(x, s)));
            }
        }
        let t = RewardTable::from_points(&pts).unwrap();
        for &(x, s) in &[(0.5, 1.5), (2.0, 3.0), (3.0, 4.0), (0.0, 1.0)] {
            assert!((t.eval(x, s) - f(x, s)).abs() < 1e-12);
        }
        assert_eq!(t.eval(10.0, 10.0), f(3.0, 4.0));
        assert!(t.into_reward("t").s_dependent);
    }

    #[test]
    fn single_row_is_s_independent() {
        let t = RewardTable::from_points(&[(0.0, 1.0, 2.0), (1.0, 1.0, 0.0)]).unwrap();
        assert_eq!(t.eval(0.25, 7.0), 1.5);
        assert!(!t.into_reward("t").s_dependent);
    }

    #[test]
    fn incomplete_grid_rejected() {
        assert!(RewardTable::from_points(&[(0.0, 1.0, 2.0), (1.0, 1.0, 0.0), (1.0, 2.0, 0.0)]).is_err());
        assert!(RewardTable::from_points(&[(0.0, 1.0, 2.0), (0.0, 1.0, 0.0)]).is_err());
    }
}
