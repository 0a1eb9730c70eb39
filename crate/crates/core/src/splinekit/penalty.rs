//! Difference penalties and sum-to-zero centering.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthogonal_complement;

/// `DᵀD` for the `order`-th difference operator `D` on `num_basis`
/// coefficients.
pub fn difference_penalty(num_basis: usize, order: usize) -> Result<DMatrix<f64>> {
    if order >= num_basis {
        return Err(Error::Config(format!("difference order {order} must be below the basis size {num_basis}")));
    }
    let mut d = DMatrix::<f64>::identity(num_basis, num_basis);
    for _ in 0..order {
        let rows = d.nrows();
        d = d.rows(1, rows - 1) - d.rows(0, rows - 1);
    }
    Ok(d.transpose() * d)
}

/// Reparameterisation applied by [`center_design`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Centering {
    None,
    /// Original coefficients are `transform * reduced`.
    Applied {
        transform: DMatrix<f64>,
    },
}

impl Centering {
    /// Maps reduced coefficients back to the original basis.
    pub fn expand(&self, reduced: &DVector<f64>) -> DVector<f64> {
        match self {
            Centering::None => reduced.clone(),
            Centering::Applied { transform } => transform * reduced,
        }
    }

    /// Applies the same reparameterisation to another design on the
    /// original basis.
    pub fn apply(&self, design: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Centering::None => design,
            Centering::Applied { transform } => design * transform,
        }
    }
}

/// Imposes the constraint that the fitted term sums to zero over the design
/// rows, by restricting coefficients to the orthogonal complement of the
/// column sums.
pub fn center_design(design: &DMatrix<f64>, penalty: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, Centering)> {
    let d = design.ncols();
    if d < 2 {
        return Err(Error::Config("centering needs at least two columns; nothing would remain".into()));
    }
    if penalty.shape() != (d, d) {
        return Err(Error::Config(format!("penalty is {:?} but the design has {d} columns", penalty.shape())));
    }
    let sums = DVector::from_iterator(d, design.column_iter().map(|c| c.sum()));
    if sums.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite column sums in centering constraint".into()));
    }
    let z = orthogonal_complement(&sums);
    let x = design * &z;
    let k = z.transpose() * penalty * &z;
    let k = (&k + k.transpose()) * 0.5;
    Ok((x, k, Centering::Applied { transform: z }))
}
