//! Design matrices of additive terms evaluated at per-subject time points.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{center_design, difference_penalty, eval_bspline_basis, Centering, SplineBasisDef};
use crate::data::LongSurvDataset;
use crate::error::{Error, Result};
use crate::fpca::MfpcBasis;
use crate::jointmodel::spec::{Predictor, Term, LOG_TIME, TIME};

/// Identifies term `term` of predictor `predictor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermLabel {
    pub predictor: Predictor,
    pub term: usize,
}

/// Design and penalty of one term, plus what is needed to evaluate the same
/// term at other points.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDesign {
    pub label: TermLabel,
    pub design: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub centering: Centering,
    /// Spline basis of smooth terms.
    pub spline: Option<SplineBasisDef>,
}

impl TermDesign {
    pub fn num_coefficients(&self) -> usize {
        self.design.ncols()
    }

    /// Evaluates the (non-MFPC) term at new points with the construction-time
    /// basis and centering.
    pub fn evaluate(&self, term: &Term, data: &LongSurvDataset, times: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        match term {
            Term::Smooth(s) => {
                let def = self.spline.as_ref().expect("smooth term carries its basis");
                let values = variable_values(data, times, &s.variable)?;
                let clamped = clamp_to_domain(&values, def.domain);
                Ok(self.centering.apply(eval_bspline_basis(def, &clamped)?))
            }
            Term::Mfpc => Err(Error::Config("MFPC designs are evaluated with mfpc_random_effect_design".into())),
            _ => parametric_design(term, data, times),
        }
    }
}

/// Values of `variable` at each (subject, time) pair, subject-major.
fn variable_values(data: &LongSurvDataset, times: &[Vec<f64>], variable: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, ts) in times.iter().enumerate() {
        if variable == TIME {
            out.extend_from_slice(ts);
        } else if variable == LOG_TIME {
            if let Some(&t) = ts.iter().find(|&&t| t <= 0.0) {
                return Err(Error::Domain(format!("log(t) evaluated at non-positive time {t}")));
            }
            out.extend(ts.iter().map(|t| t.ln()));
        } else {
            let v = data.covariate(i, variable)?;
            out.extend(std::iter::repeat_n(v, ts.len()));
        }
    }
    Ok(out)
}

/// Points marginally outside a smooth's domain (rounding in quadrature
/// node placement) are pulled onto the boundary.
fn clamp_to_domain(values: &[f64], (a, b): (f64, f64)) -> Vec<f64> {
    let tol = 1e-9 * (b - a);
    values
        .iter()
        .map(|&v| {
            if v < a && v >= a - tol {
                a
            } else if v > b && v <= b + tol {
                b
            } else {
                v
            }
        })
        .collect()
}

fn parametric_design(term: &Term, data: &LongSurvDataset, times: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let rows: usize = times.iter().map(Vec::len).sum();
    match term {
        Term::Intercept => Ok(DMatrix::from_element(rows, 1, 1.0)),
        Term::Linear { covariates } => {
            let mut col = vec![1.0; rows];
            for c in covariates {
                let v = variable_values(data, times, c)?;
                col.iter_mut().zip(v).for_each(|(a, b)| *a *= b);
            }
            Ok(DMatrix::from_vec(rows, 1, col))
        }
        _ => unreachable!("not a parametric term"),
    }
}

/// Design of a single term at the given per-subject times. Smooth terms are
/// built (and centered) over exactly these rows.
pub fn term_design(
    label: TermLabel,
    term: &Term,
    data: &LongSurvDataset,
    times: &[Vec<f64>],
    basis: Option<&MfpcBasis>,
) -> Result<TermDesign> {
    if times.len() != data.num_subjects() {
        return Err(Error::Schema(format!("{} time vectors for {} subjects", times.len(), data.num_subjects())));
    }
    for (s, ts) in data.subjects.iter().zip(times) {
        if ts.iter().any(|&t| t < 0.0 || t > s.time * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("evaluation time outside the follow-up of subject {}", s.id)));
        }
    }
    match term {
        Term::Intercept | Term::Linear { .. } => Ok(TermDesign {
            label,
            design: parametric_design(term, data, times)?,
            penalty: DMatrix::zeros(1, 1),
            centering: Centering::None,
            spline: None,
        }),
        Term::Smooth(s) => {
            let values = variable_values(data, times, &s.variable)?;
            let domain = match s.domain {
                Some([a, b]) => (a, b),
                None if s.variable == TIME => (0.0, data.max_time()),
                None => {
                    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi)
                }
            };
            let def = SplineBasisDef::new(s.degree, s.num_basis, domain, s.penalty_order)?;
            let x = eval_bspline_basis(&def, &values)?;
            let k = difference_penalty(s.num_basis, s.penalty_order)?;
            let (design, penalty, centering) = if s.center { center_design(&x, &k)? } else { (x, k, Centering::None) };
            Ok(TermDesign { label, design, penalty, centering, spline: Some(def) })
        }
        Term::Mfpc => {
            let basis = basis.ok_or_else(|| Error::Config("MFPC term requires a basis".into()))?;
            let k =
                label.predictor.marker().ok_or_else(|| Error::Config("MFPC term outside a marker predictor".into()))?;
            let design = mfpc_random_effect_design(basis, k, times)?;
            let dim = design.ncols();
            Ok(TermDesign {
                label,
                design,
                penalty: DMatrix::identity(dim, dim),
                centering: Centering::None,
                spline: None,
            })
        }
    }
}

/// Designs of all terms of predictor `predictor`.
pub fn assemble_predictor_design(
    predictor: Predictor,
    terms: &[Term],
    data: &LongSurvDataset,
    times: &[Vec<f64>],
    basis: Option<&MfpcBasis>,
) -> Result<Vec<TermDesign>> {
    terms
        .iter()
        .enumerate()
        .map(|(h, t)| term_design(TermLabel { predictor, term: h }, t, data, times, basis))
        .collect()
}

/// `blockdiag(Ψ_1^(k), …, Ψ_n^(k))`: rows are the subject-major evaluation
/// points, columns the scores `(ρ_11, …, ρ_1M, ρ_21, …)`.
pub fn mfpc_random_effect_design(basis: &MfpcBasis, k: usize, times: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = basis.num_components();
    let rows: usize = times.iter().map(Vec::len).sum();
    let mut x = DMatrix::zeros(rows, times.len() * m);
    let mut r = 0;
    for (i, ts) in times.iter().enumerate() {
        for &t in ts {
            for (j, v) in basis.eval(k, t)?.into_iter().enumerate() {
                x[(r, i * m + j)] = v;
            }
            r += 1;
        }
    }
    Ok(x)
}

/// Vertical stack of the per-marker random-effect designs, all acting on
/// the same score vector.
pub fn stacked_mfpc_design(basis: &MfpcBasis, times: &[Vec<Vec<f64>>]) -> Result<DMatrix<f64>> {
    let blocks =
        times.iter().enumerate().map(|(k, t)| mfpc_random_effect_design(basis, k, t)).collect::<Result<Vec<_>>>()?;
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), b.shape()).copy_from(&b);
        r += b.nrows();
    }
    Ok(out)
}
