//! B-spline bases on equidistant knots with repeated boundary knots.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Definition of a B-spline basis with its difference penalty order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineBasisDef {
    pub degree: usize,
    /// Number of basis functions before any centering.
    pub num_basis: usize,
    pub domain: (f64, f64),
    pub penalty_order: usize,
}

impl SplineBasisDef {
    pub fn new(degree: usize, num_basis: usize, domain: (f64, f64), penalty_order: usize) -> Result<Self> {
        let def = Self { degree, num_basis, domain, penalty_order };
        def.validate()?;
        Ok(def)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_basis <= self.degree + 1 {
            return Err(Error::Config(format!(
                "B-spline basis needs more than degree + 1 = {} functions, got {}",
                self.degree + 1,
                self.num_basis
            )));
        }
        if self.penalty_order >= self.num_basis {
            return Err(Error::Config(format!(
                "penalty order {} must be below the basis size {}",
                self.penalty_order, self.num_basis
            )));
        }
        let (a, b) = self.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!("degenerate spline domain [{a}, {b}]")));
        }
        Ok(())
    }

    /// Full knot vector: `degree + 1` copies of each boundary and equidistant
    /// interior knots.
    pub fn knots(&self) -> Vec<f64> {
        let (a, b) = self.domain;
        let p = self.degree;
        let intervals = self.num_basis - p;
        let h = (b - a) / intervals as f64;
        let mut knots = vec![a; p + 1];
        knots.extend((1..intervals).map(|j| a + j as f64 * h));
        knots.extend(std::iter::repeat_n(b, p + 1));
        knots
    }

    /// Evaluates all basis functions at `x` into `out` (length `num_basis`).
    fn eval_into(&self, knots: &[f64], x: f64, out: &mut [f64]) {
        let p = self.degree;
        let n = self.num_basis;
        // Knot span index `s` with knots[s] <= x < knots[s + 1], clamped so that
        // the right boundary belongs to the last non-empty span.
        let s = if x >= knots[n] {
            n - 1
        } else {
            let mut lo = p;
            let mut hi = n;
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if x < knots[mid] {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            lo
        };
        // de Boor's triangular scheme for the p + 1 nonzero functions.
        let mut values = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        values[0] = 1.0;
        for j in 1..=p {
            left[j] = x - knots[s + 1 - j];
            right[j] = knots[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        out.fill(0.0);
        for (r, v) in values.into_iter().enumerate() {
            out[s - p + r] = v;
        }
    }
}

/// Evaluates the basis at `points`; row `i` holds the basis values at
/// `points[i]`.
pub fn eval_bspline_basis(def: &SplineBasisDef, points: &[f64]) -> Result<DMatrix<f64>> {
    def.validate()?;
    let (a, b) = def.domain;
    let knots = def.knots();
    let mut out = DMatrix::zeros(points.len(), def.num_basis);
    let mut row = vec![0.0; def.num_basis];
    for (i, &x) in points.iter().enumerate() {
        if !(x >= a && x <= b) {
            return Err(Error::Domain(format!("spline evaluation point {x} outside domain [{a}, {b}]")));
        }
        def.eval_into(&knots, x, &mut row);
        for (j, &v) in row.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}
