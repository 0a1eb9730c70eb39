//! Grid-evaluated multivariate functional principal component bases.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::interp_linear;
use crate::quadrature::trapezoid_weights;

/// Multivariate eigenfunctions `ψ_m = (ψ_m^(1), …, ψ_m^(K))` on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MfpcBasis {
    pub grid: Vec<f64>,
    /// Scalar-product weights `w_k`.
    pub weights: Vec<f64>,
    /// Per marker, a `grid × M*` matrix of eigenfunction values.
    pub eigenfunctions: Vec<DMatrix<f64>>,
    /// Eigenvalues `ν_m`, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Coefficients of the univariate components in each multivariate one
    /// (`Σ_k M_k × M*`); empty when the basis was not built from univariate
    /// components.
    pub combination_weights: DMatrix<f64>,
    /// Number of components in use.
    pub truncation: usize,
}

/// Serialised form: matrices are stored as lists of rows.
#[derive(Serialize, Deserialize)]
struct BasisDocument {
    grid: Vec<f64>,
    weights: Vec<f64>,
    eigenfunctions: Vec<Vec<Vec<f64>>>,
    eigenvalues: Vec<f64>,
    combination_weights: Vec<Vec<f64>>,
    m: usize,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Schema("ragged matrix in basis document".into()));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

impl Serialize for MfpcBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BasisDocument {
            grid: self.grid.clone(),
            weights: self.weights.clone(),
            eigenfunctions: self.eigenfunctions.iter().map(to_rows).collect(),
            eigenvalues: self.eigenvalues.clone(),
            combination_weights: to_rows(&self.combination_weights),
            m: self.truncation,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MfpcBasis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = BasisDocument::deserialize(d)?;
        let mstar = doc.eigenvalues.len();
        let eigenfunctions = doc
            .eigenfunctions
            .iter()
            .map(|rows| from_rows(rows, mstar))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        let cw_cols = doc.combination_weights.first().map_or(0, Vec::len);
        let combination_weights = from_rows(&doc.combination_weights, cw_cols).map_err(serde::de::Error::custom)?;
        let basis = MfpcBasis {
            grid: doc.grid,
            weights: doc.weights,
            eigenfunctions,
            eigenvalues: doc.eigenvalues,
            combination_weights,
            truncation: doc.m,
        };
        basis.validate().map_err(serde::de::Error::custom)?;
        Ok(basis)
    }
}

impl MfpcBasis {
    pub fn num_markers(&self) -> usize {
        self.eigenfunctions.len()
    }

    /// Number of components in use (`M`).
    pub fn num_components(&self) -> usize {
        self.truncation
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.grid.len();
        if g < 2 || self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Schema("basis grid must be strictly increasing with ≥ 2 points".into()));
        }
        if self.weights.len() != self.eigenfunctions.len() || self.weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Schema("one positive weight per marker required".into()));
        }
        let mstar = self.eigenvalues.len();
        for (k, ef) in self.eigenfunctions.iter().enumerate() {
            if ef.shape() != (g, mstar) {
                return Err(Error::Schema(format!(
                    "marker {} eigenfunctions have shape {:?}, expected ({g}, {mstar})",
                    k + 1,
                    ef.shape()
                )));
            }
        }
        if self.truncation == 0 || self.truncation > mstar {
            return Err(Error::Schema(format!("truncation {} outside 1..={mstar}", self.truncation)));
        }
        Ok(())
    }

    /// Values `ψ_1^(k)(t), …, ψ_M^(k)(t)` by linear interpolation on the grid.
    pub fn eval(&self, k: usize, t: f64) -> Result<Vec<f64>> {
        let ef = &self.eigenfunctions[k];
        (0..self.truncation)
            .map(|m| {
                let col: Vec<f64> = ef.column(m).iter().copied().collect();
                interp_linear(&self.grid, &col, t).ok_or_else(|| {
                    Error::Domain(format!(
                        "time {t} not covered by the basis grid [{}, {}]",
                        self.grid[0],
                        self.grid[self.grid.len() - 1]
                    ))
                })
            })
            .collect()
    }

    /// Multivariate scalar product `Σ_k w_k ∫ f^(k) g^(k)` of two grid
    /// functions given per marker, with trapezoid quadrature.
    pub fn inner_product(&self, f: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
        let tw = trapezoid_weights(&self.grid);
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((fk, gk), w)| w * fk.iter().zip(gk).zip(&tw).map(|((a, b), c)| a * b * c).sum::<f64>())
            .sum()
    }

    /// Component `m` as per-marker grid vectors.
    pub fn component(&self, m: usize) -> Vec<Vec<f64>> {
        self.eigenfunctions.iter().map(|ef| ef.column(m).iter().copied().collect()).collect()
    }

    /// Gram matrix `⟨⟨ψ_m, ψ_m'⟩⟩` of the components in use.
    pub fn gram(&self) -> DMatrix<f64> {
        let comps: Vec<_> = (0..self.truncation).map(|m| self.component(m)).collect();
        DMatrix::from_fn(self.truncation, self.truncation, |a, b| self.inner_product(&comps[a], &comps[b]))
    }

    /// Copy with `m` components in use.
    pub fn with_truncation(&self, m: usize) -> Result<Self> {
        let mut b = self.clone();
        b.truncation = m;
        b.validate()?;
        Ok(b)
    }

    /// Copy keeping only the first `m` components.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.eigenvalues.len() {
            return Err(Error::Config(format!("cannot keep {m} of {} components", self.eigenvalues.len())));
        }
        let mut out = self.clone();
        out.eigenvalues.truncate(m);
        for ef in out.eigenfunctions.iter_mut() {
            *ef = ef.columns(0, m).into_owned();
        }
        if out.combination_weights.ncols() > m {
            out.combination_weights = out.combination_weights.columns(0, m).into_owned();
        }
        out.truncation = m;
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
