//! Gauss–Legendre rules and the graded composite rule used for cumulative
//! hazards.

use serde::{Deserialize, Serialize};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule; nodes are the roots of `P_n`, found by Newton's method
    /// from the Chebyshev-like initial guess.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(mid + half * x)).sum::<f64>() * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule on `[0, upper]` with panels graded
/// geometrically towards zero.
///
/// Panel `j` (counted from the right) ends at `upper * grading^j`; the last
/// panel is `[0, upper * grading^(panels-1)]`. With `panels = 1` this is the
/// plain single-panel rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub points: usize,
    pub panels: usize,
    pub grading: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { points: 7, panels: 4, grading: 0.2 }
    }
}

impl QuadratureConfig {
    /// Seven nodes on a single panel.
    pub fn single_panel() -> Self {
        Self { points: 7, panels: 1, grading: 1.0 }
    }

    pub fn rule(&self) -> QuadratureRule {
        let panels = self.panels.max(1);
        let mut breaks = Vec::with_capacity(panels + 1);
        breaks.push(0.0);
        for j in (0..panels).rev() {
            breaks.push(self.grading.powi(j as i32));
        }
        QuadratureRule::from_breaks(self.points, &breaks)
    }

    pub fn nodes_per_interval(&self) -> usize {
        self.points * self.panels.max(1)
    }
}

/// Nodes and weights on the unit interval; scale by `upper` to integrate over
/// `[0, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: usize,
    breaks: Vec<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn from_breaks(points: usize, breaks: &[f64]) -> Self {
        let gl = GaussLegendre::new(points);
        let mut nodes = Vec::with_capacity(points * (breaks.len() - 1));
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            for (&x, &w) in gl.nodes.iter().zip(&gl.weights) {
                nodes.push(0.5 * (a + b) + half * x);
                weights.push(w * half);
            }
        }
        Self { points, breaks: breaks.to_vec(), nodes, weights }
    }

    /// The same rule with every panel split in two.
    pub fn refined(&self) -> Self {
        let mut breaks = vec![self.breaks[0]];
        for pair in self.breaks.windows(2) {
            breaks.push(0.5 * (pair[0] + pair[1]));
            breaks.push(pair[1]);
        }
        Self::from_breaks(self.points, &breaks)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(node, weight)` pairs for the interval `[0, upper]`.
    pub fn scaled(&self, upper: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (x * upper, w * upper))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, upper: f64, mut f: F) -> f64 {
        self.scaled(upper).map(|(s, w)| w * f(s)).sum()
    }
}

/// Cumulative hazard `∫_0^upper hazard(s) ds` under `rule`.
pub fn cumulative_hazard<F: FnMut(f64) -> f64>(rule: &QuadratureRule, upper: f64, hazard: F) -> f64 {
    rule.integrate(upper, hazard)
}

/// Trapezoidal weights for a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for j in 1..n {
        let h = 0.5 * (grid[j] - grid[j - 1]);
        w[j - 1] += h;
        w[j] += h;
    }
    w
}

/// `n` equidistant points on `[lo, hi]`.
pub fn equidistant_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|j| if j == n - 1 { hi } else { lo + step * j as f64 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_point_rule_matches_tabulated_values() {
        let gl = GaussLegendre::new(7);
        let expected_nodes = [
            -0.949_107_912_342_758_5,
            -0.741_531_185_599_394_4,
            -0.405_845_151_377_397_2,
            0.0,
            0.405_845_151_377_397_2,
            0.741_531_185_599_394_4,
            0.949_107_912_342_758_5,
        ];
        let expected_weights = [
            0.129_484_966_168_869_7,
            0.279_705_391_489_276_7,
            0.381_830_050_505_118_9,
            0.417_959_183_673_469_4,
            0.381_830_050_505_118_9,
            0.279_705_391_489_276_7,
            0.129_484_966_168_869_7,
        ];
        for j in 0..7 {
            assert!((gl.nodes[j] - expected_nodes[j]).abs() < 1e-15);
            assert!((gl.weights[j] - expected_weights[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_hazard_is_exact() {
        for cfg in [QuadratureConfig::single_panel(), QuadratureConfig::default()] {
            let rule = cfg.rule();
            let c: f64 = 0.7;
            let v = cumulative_hazard(&rule, 0.83, |_| c.exp());
            assert!((v - 0.83 * c.exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn degree_thirteen_polynomial_is_exact() {
        // hazard(s) = exp(log p(s)) with p positive of degree 13
        let coef: Vec<f64> = (0..14).map(|j| 1.0 + 0.1 * j as f64).collect();
        let p = |s: f64| coef.iter().rev().fold(0.0, |acc, c| acc * s + c);
        let upper: f64 = 0.9;
        let exact: f64 = coef.iter().enumerate().map(|(j, c)| c * upper.powi(j as i32 + 1) / (j as f64 + 1.0)).sum();
        for cfg in [QuadratureConfig::single_panel(), QuadratureConfig::default()] {
            let v = cumulative_hazard(&cfg.rule(), upper, |s| p(s).ln().exp());
            assert!(((v - exact) / exact).abs() < 1e-10, "{v} vs {exact}");
        }
    }

    #[test]
    fn weibull_baseline_closed_form() {
        let rule = QuadratureConfig::default().rule();
        for t in [0.25_f64, 0.5, 1.0] {
            let v = cumulative_hazard(&rule, t, |s| (1.37 * s.powf(0.37)).ln().exp());
            let exact = t.powf(1.37);
            assert!(((v - exact) / exact).abs() < 1e-4);
        }
    }

    #[test]
    fn refinement_changes_little() {
        let rule = QuadratureConfig::default().rule();
        let fine = rule.refined();
        assert_eq!(fine.len(), 2 * rule.len());
        for t in [0.1_f64, 0.5, 1.0] {
            let h = |s: f64| 1.37 * s.powf(0.37);
            let a = cumulative_hazard(&rule, t, h);
            let b = cumulative_hazard(&fine, t, h);
            assert!(((a - b) / a).abs() < 1e-5);
        }
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = equidistant_grid(0.0, 2.0, 11);
        let w = trapezoid_weights(&g);
        let v: f64 = g.iter().zip(&w).map(|(x, w)| w * (3.0 * x + 1.0)).sum();
        assert!((v - 8.0).abs() < 1e-12);
    }
}
