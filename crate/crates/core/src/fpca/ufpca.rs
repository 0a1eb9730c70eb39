//! Univariate FPCA of one sparsely observed marker.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::smoothing::{gcv_fit, NormalEquations};
use crate::data::{LongSurvDataset, Observation, Subject};
use crate::error::{Error, Result};
use crate::jointmodel::spec::{Predictor, Term};
use crate::linalg::{interp_linear, normalize_signs, sym_eigen_desc};
use crate::quadrature::trapezoid_weights;
use crate::splinekit::{difference_penalty, eval_bspline_basis, term_design, SplineBasisDef, TermLabel};

/// Lower bound on the estimated measurement-error variance.
pub const MIN_ERROR_VARIANCE: f64 = 1e-8;

/// Relative size below which eigenvalues are treated as zero.
const EIGEN_REL_TOL: f64 = 1e-12;

/// Univariate FPCA of marker `marker`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UfpcaResult {
    pub marker: usize,
    pub grid: Vec<f64>,
    /// Mean function on the grid (covariates at their sample means).
    pub mean: Vec<f64>,
    /// `grid × M_k` eigenfunctions, orthonormal under trapezoid quadrature.
    pub eigenfunctions: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub error_variance: f64,
    /// `subjects × M_k` predicted scores.
    pub scores: DMatrix<f64>,
}

impl UfpcaResult {
    pub fn num_components(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Working-independence mean fit of one marker.
#[derive(Debug, Clone)]
pub struct MarkerMean {
    pub grid: Vec<f64>,
    pub mean_on_grid: Vec<f64>,
    /// Per subject, observations with the fitted mean removed.
    pub residuals: Vec<Vec<Observation>>,
    pub coefficients: Vec<f64>,
}

/// Penalised least-squares fit of the fixed-effect terms of marker `k`,
/// ignoring censoring and within-subject correlation.
pub fn estimate_marker_mean(data: &LongSurvDataset, k: usize, terms: &[Term], grid: &[f64]) -> Result<MarkerMean> {
    if data.num_observations(k) == 0 {
        return Err(Error::Schema(format!("marker {} has no observations", k + 1)));
    }
    if terms.iter().any(|t| matches!(t, Term::Mfpc)) {
        return Err(Error::Config("mean model must not contain random effects".into()));
    }
    let times: Vec<Vec<f64>> = data.longitudinal.iter().map(|o| o[k].iter().map(|x| x.time).collect()).collect();
    let y = DVector::from_iterator(
        data.num_observations(k),
        data.longitudinal.iter().flat_map(|o| o[k].iter().map(|x| x.value)),
    );

    let designs = terms
        .iter()
        .enumerate()
        .map(|(h, t)| term_design(TermLabel { predictor: Predictor::Mu(k), term: h }, t, data, &times, None))
        .collect::<Result<Vec<_>>>()?;
    let dim: usize = designs.iter().map(|d| d.num_coefficients()).sum();
    let mut x = DMatrix::zeros(y.len(), dim);
    let mut penalty = DMatrix::zeros(dim, dim);
    let mut col = 0;
    for (d, t) in designs.iter().zip(terms) {
        let c = d.num_coefficients();
        x.view_mut((0, col), (y.len(), c)).copy_from(&d.design);
        if matches!(t, Term::Smooth(_)) {
            penalty.view_mut((col, col), (c, c)).copy_from(&d.penalty);
        }
        col += c;
    }
    let ne = NormalEquations::from_design(&x, &y);
    let coef = if penalty.iter().all(|&v| v == 0.0) {
        ne.xtx.clone().cholesky().map(|ch| ch.solve(&ne.xty)).ok_or_else(|| {
            Error::Numerical(format!("marker {}: singular normal equations for the mean terms {:?}", k + 1, terms))
        })?
    } else {
        gcv_fit(&ne, &penalty)?.coef
    };
    let fitted = &x * &coef;

    let mut residuals = Vec::with_capacity(data.num_subjects());
    let mut r = 0;
    for o in &data.longitudinal {
        residuals.push(
            o[k].iter()
                .map(|obs| {
                    let res = Observation { time: obs.time, value: obs.value - fitted[r] };
                    r += 1;
                    res
                })
                .collect(),
        );
    }

    // Mean curve for a reference subject with all covariates at their
    // sample means.
    let mut covariates = std::collections::BTreeMap::new();
    for name in data.covariate_names() {
        let mean = (0..data.num_subjects()).map(|i| data.covariate(i, &name).unwrap()).sum::<f64>()
            / data.num_subjects() as f64;
        covariates.insert(name, mean);
    }
    let reference = LongSurvDataset::new(
        vec![Subject {
            id: "reference".into(),
            time: grid[grid.len() - 1].max(data.max_time()),
            event: false,
            covariates,
        }],
        vec![vec![Vec::new(); data.num_markers]],
        data.num_markers,
    )?;
    let grid_times = vec![grid.to_vec()];
    let mut mean_on_grid = vec![0.0; grid.len()];
    let mut col = 0;
    for (d, t) in designs.iter().zip(terms) {
        let c = d.num_coefficients();
        let xg = d.evaluate(t, &reference, &grid_times)?;
        let part = xg * coef.rows(col, c);
        mean_on_grid.iter_mut().zip(part.iter()).for_each(|(a, b)| *a += b);
        col += c;
    }

    Ok(MarkerMean { grid: grid.to_vec(), mean_on_grid, residuals, coefficients: coef.iter().copied().collect() })
}

/// Smoothed covariance surface with the measurement-error variance
/// separated from its diagonal.
#[derive(Debug, Clone)]
pub struct CovarianceSurface {
    pub surface: DMatrix<f64>,
    pub error_variance: f64,
}

/// Index of the unique coefficient `(a, b)` with `a <= b` of a symmetric
/// `c × c` coefficient matrix.
fn sym_index(a: usize, b: usize, c: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * c - a * (a + 1) / 2 + b
}

/// Penalised tensor-product spline smoother of the off-diagonal
/// crossproducts `y*_ij y*_il`, `j ≠ l`, with symmetric coefficients.
pub fn smooth_covariance(
    centered: &[Vec<Observation>],
    grid: &[f64],
    marginal_basis_size: usize,
) -> Result<CovarianceSurface> {
    let contributing = centered.iter().filter(|o| o.len() >= 2).count();
    if contributing < 2 {
        return Err(Error::Estimation(format!(
            "covariance smoothing needs at least two subjects with two observations, found {contributing}"
        )));
    }
    let domain = (grid[0], grid[grid.len() - 1]);
    let def = SplineBasisDef::new(3, marginal_basis_size, domain, 2)?;
    let c = marginal_basis_size;
    let u = c * (c + 1) / 2;

    // Unique-coefficient expansion E (c² × u) and the tensor penalty.
    let mut e = DMatrix::zeros(c * c, u);
    for a in 0..c {
        for b in 0..c {
            e[(a * c + b, sym_index(a, b, c))] = 1.0;
        }
    }
    let d2 = difference_penalty(c, 2)?;
    let eye = DMatrix::<f64>::identity(c, c);
    let full_pen = d2.kronecker(&eye) + eye.kronecker(&d2);
    let penalty = e.transpose() * full_pen * &e;

    let mut ne = NormalEquations::new(u);
    let mut diag_ne = NormalEquations::new(c);
    let mut row = vec![0.0; u];
    for obs in centered {
        let times: Vec<f64> = obs.iter().map(|o| o.time.clamp(domain.0, domain.1)).collect();
        if times.is_empty() {
            continue;
        }
        let b = eval_bspline_basis(&def, &times)?;
        for j in 0..obs.len() {
            let bj: Vec<f64> = b.row(j).iter().copied().collect();
            diag_ne.push(&bj, obs[j].value * obs[j].value);
            for l in (j + 1)..obs.len() {
                row.fill(0.0);
                for a in 0..c {
                    if b[(j, a)] == 0.0 {
                        continue;
                    }
                    for bb in 0..c {
                        row[sym_index(a, bb, c)] += b[(j, a)] * b[(l, bb)];
                    }
                }
                ne.push(&row, obs[j].value * obs[l].value);
            }
        }
    }
    let fit = gcv_fit(&ne, &penalty)?;
    let coef = &e * &fit.coef;
    let coef = DMatrix::from_row_slice(c, c, coef.as_slice());
    let bg = eval_bspline_basis(&def, grid)?;
    let surface = &bg * coef * bg.transpose();
    let surface = (&surface + surface.transpose()) * 0.5;

    let diag_fit = gcv_fit(&diag_ne, &d2)?;
    let raw_diag = &bg * diag_fit.coef;
    let tw = trapezoid_weights(grid);
    let span = domain.1 - domain.0;
    let excess: f64 = (0..grid.len()).map(|g| tw[g] * (raw_diag[g] - surface[(g, g)])).sum::<f64>() / span;
    Ok(CovarianceSurface { surface, error_variance: excess.max(MIN_ERROR_VARIANCE) })
}

/// Eigenpairs of the covariance operator with trapezoid quadrature,
/// truncated at the proportion `pve` of the positive eigenvalue sum.
pub fn eigen_decompose_covariance(
    surface: &DMatrix<f64>,
    grid: &[f64],
    pve: f64,
) -> Result<(DMatrix<f64>, Vec<f64>, usize)> {
    if !(pve > 0.0 && pve <= 1.0) {
        return Err(Error::Config(format!("pve {pve} outside (0, 1]")));
    }
    let g = grid.len();
    if surface.shape() != (g, g) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Schema("surface/grid mismatch or grid not strictly increasing".into()));
    }
    let sw: Vec<f64> = trapezoid_weights(grid).iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(g, g, |r, c| sw[r] * surface[(r, c)] * sw[c]);
    let a = (&a + a.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen_desc(&a);
    let top = vals[0];
    if top.is_nan() || top <= 0.0 {
        return Err(Error::Estimation("covariance surface has no positive eigenvalue".into()));
    }
    let positive: Vec<f64> = vals.iter().copied().take_while(|&v| v > top * EIGEN_REL_TOL).collect();
    let m = pve_count(&positive, pve);
    let mut ef = DMatrix::from_fn(g, m, |r, c| vecs[(r, c)] / sw[r]);
    normalize_signs(&mut ef);
    Ok((ef, positive[..m].to_vec(), m))
}

/// Smallest count whose cumulative share of `values` reaches `pve`.
pub fn pve_count(values: &[f64], pve: f64) -> usize {
    let total: f64 = values.iter().sum();
    let mut cum = 0.0;
    for (j, v) in values.iter().enumerate() {
        cum += v;
        if cum / total >= pve {
            return j + 1;
        }
    }
    values.len()
}

/// Conditional-expectation score prediction
/// `ξ̂_i = D Φ_iᵀ (Φ_i D Φ_iᵀ + σ² I)⁻¹ y*_i`.
pub fn predict_scores_ce(
    centered: &[Vec<Observation>],
    grid: &[f64],
    eigenfunctions: &DMatrix<f64>,
    eigenvalues: &[f64],
    error_variance: f64,
) -> Result<DMatrix<f64>> {
    let m = eigenvalues.len();
    let columns: Vec<Vec<f64>> = (0..m).map(|j| eigenfunctions.column(j).iter().copied().collect()).collect();
    let mut scores = DMatrix::zeros(centered.len(), m);
    for (i, obs) in centered.iter().enumerate() {
        if obs.is_empty() {
            continue;
        }
        let phi = DMatrix::from_fn(obs.len(), m, |r, j| {
            interp_linear(grid, &columns[j], obs[r].time.clamp(grid[0], grid[grid.len() - 1])).unwrap()
        });
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues));
        let mut inner = &phi * &d * phi.transpose();
        for r in 0..obs.len() {
            inner[(r, r)] += error_variance;
        }
        let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.value));
        let sol = inner.cholesky().map(|ch| ch.solve(&y)).ok_or_else(|| {
            Error::Numerical(format!(
                "subject {i}: score prediction matrix not positive definite (error variance {error_variance})"
            ))
        })?;
        let xi = d * phi.transpose() * sol;
        scores.row_mut(i).copy_from(&xi.transpose());
    }
    Ok(scores)
}

/// Full univariate FPCA of residualised observations.
pub fn ufpca(
    marker: usize,
    centered: &[Vec<Observation>],
    grid: &[f64],
    mean: Vec<f64>,
    marginal_basis_size: usize,
    pve: f64,
) -> Result<UfpcaResult> {
    let cov = smooth_covariance(centered, grid, marginal_basis_size)?;
    let (eigenfunctions, eigenvalues, _) = eigen_decompose_covariance(&cov.surface, grid, pve)?;
    let scores = predict_scores_ce(centered, grid, &eigenfunctions, &eigenvalues, cov.error_variance)?;
    Ok(UfpcaResult {
        marker,
        grid: grid.to_vec(),
        mean,
        eigenfunctions,
        eigenvalues,
        error_variance: cov.error_variance,
        scores,
    })
}
