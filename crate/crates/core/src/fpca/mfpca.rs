//! Combination of univariate FPCAs into a multivariate basis.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::MfpcBasis;
use super::ufpca::{estimate_marker_mean, pve_count, ufpca, UfpcaResult};
use crate::data::LongSurvDataset;
use crate::error::{Error, Result};
use crate::jointmodel::spec::Term;
use crate::linalg::{normalize_signs, sym_eigen_desc};
use crate::quadrature::equidistant_grid;

/// Scalar-product weights of the markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// All weights one.
    Unit,
    /// `w_k = 1 / Σ_m λ_km`.
    InverseIntegratedVariance,
    Given(Vec<f64>),
}

/// Subject selection for basis estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimRule {
    /// Every marker needs an observation after this fraction of the interval.
    pub fraction: f64,
    /// Minimum number of observations per marker.
    pub min_observations: usize,
}

impl Default for TrimRule {
    fn default() -> Self {
        Self { fraction: 0.1, min_observations: 0 }
    }
}

/// Settings of the two-step basis estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpcaOptions {
    pub grid_points: usize,
    /// Interval of the basis; defaults to `[0, max follow-up]`.
    pub domain: Option<[f64; 2]>,
    pub marginal_basis_size: usize,
    pub univariate_pve: f64,
    pub trim: Option<TrimRule>,
    pub weights: WeightMode,
    /// Multivariate truncation; `None` keeps all `M*` components.
    pub multivariate_pve: Option<f64>,
}

impl Default for FpcaOptions {
    fn default() -> Self {
        Self {
            grid_points: 101,
            domain: None,
            marginal_basis_size: 7,
            univariate_pve: 0.99,
            trim: Some(TrimRule::default()),
            weights: WeightMode::Unit,
            multivariate_pve: None,
        }
    }
}

/// Output of [`estimate_mfpc_basis`].
#[derive(Debug, Clone)]
pub struct MfpcaFit {
    pub basis: MfpcBasis,
    pub ufpcas: Vec<UfpcaResult>,
    /// Indices of the subjects used for estimation.
    pub subjects: Vec<usize>,
    /// Multivariate scores of those subjects (`subjects × M*`).
    pub scores: DMatrix<f64>,
}

/// Subjects with, on every marker, an observation after `fraction` of the
/// interval `[lo, hi]` (and at least `min_observations` observations).
pub fn trim_subjects_for_mfpca(data: &LongSurvDataset, rule: TrimRule, interval: (f64, f64)) -> Result<Vec<usize>> {
    if !(rule.fraction > 0.0 && rule.fraction < 1.0) {
        return Err(Error::Config(format!("trimming fraction {} outside (0, 1)", rule.fraction)));
    }
    let cutoff = interval.0 + rule.fraction * (interval.1 - interval.0);
    let kept: Vec<usize> = data
        .longitudinal
        .iter()
        .enumerate()
        .filter(|(_, obs)| {
            obs.iter().all(|series| series.len() >= rule.min_observations && series.iter().any(|o| o.time > cutoff))
        })
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return Err(Error::Estimation("no subject satisfies the trimming rule".into()));
    }
    Ok(kept)
}

/// Combines univariate FPCAs that share a grid and subject rows.
pub fn combine_mfpca(ufpcas: &[UfpcaResult], weights: &WeightMode) -> Result<(MfpcBasis, DMatrix<f64>)> {
    let first = ufpcas.first().ok_or_else(|| Error::Schema("no univariate FPCA to combine".into()))?;
    for u in ufpcas {
        if u.grid != first.grid {
            return Err(Error::Schema(format!("marker {} uses a different grid", u.marker + 1)));
        }
        if u.scores.nrows() != first.scores.nrows() {
            return Err(Error::Schema(format!("marker {} has a different subject set", u.marker + 1)));
        }
    }
    let k = ufpcas.len();
    let w: Vec<f64> = match weights {
        WeightMode::Unit => vec![1.0; k],
        WeightMode::InverseIntegratedVariance => {
            ufpcas.iter().map(|u| 1.0 / u.eigenvalues.iter().sum::<f64>()).collect()
        }
        WeightMode::Given(w) => {
            if w.len() != k || w.iter().any(|&v| v.is_nan() || v <= 0.0) {
                return Err(Error::Config(format!("need {k} positive weights, got {w:?}")));
            }
            w.clone()
        }
    };

    // Position of each univariate component in the stacked vector.
    let mut offsets = Vec::with_capacity(k);
    let mut total = 0;
    for u in ufpcas {
        offsets.push(total);
        total += u.num_components();
    }
    let n = first.scores.nrows() as f64;
    let stats = |s: &DMatrix<f64>, j: usize| {
        let col = s.column(j);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        (mean, sd)
    };

    let mut z = DMatrix::zeros(total, total);
    for (a, ua) in ufpcas.iter().enumerate() {
        for (b, ub) in ufpcas.iter().enumerate() {
            let scale = (w[a] * w[b]).sqrt();
            for i in 0..ua.num_components() {
                for j in 0..ub.num_components() {
                    let value = if a == b {
                        if i == j {
                            ua.eigenvalues[i]
                        } else {
                            0.0
                        }
                    } else {
                        let (ma, sa) = stats(&ua.scores, i);
                        let (mb, sb) = stats(&ub.scores, j);
                        if sa == 0.0 || sb == 0.0 {
                            0.0
                        } else {
                            let cov = ua
                                .scores
                                .column(i)
                                .iter()
                                .zip(ub.scores.column(j).iter())
                                .map(|(x, y)| (x - ma) * (y - mb))
                                .sum::<f64>()
                                / (n - 1.0).max(1.0);
                            cov / (sa * sb) * (ua.eigenvalues[i] * ub.eigenvalues[j]).sqrt()
                        }
                    };
                    z[(offsets[a] + i, offsets[b] + j)] = scale * value;
                }
            }
        }
    }
    let z = (&z + z.transpose()) * 0.5;
    let (vals, mut vecs) = sym_eigen_desc(&z);
    normalize_signs(&mut vecs);

    let g = first.grid.len();
    let mut eigenfunctions: Vec<DMatrix<f64>> = ufpcas
        .iter()
        .enumerate()
        .map(|(a, u)| {
            let block = vecs.rows(offsets[a], u.num_components());
            (&u.eigenfunctions * block) / w[a].sqrt()
        })
        .collect();
    let mut eigenvalues: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();

    let mut basis = MfpcBasis {
        grid: first.grid.clone(),
        weights: w.clone(),
        eigenfunctions: eigenfunctions.clone(),
        eigenvalues: eigenvalues.clone(),
        combination_weights: vecs.clone(),
        truncation: total,
    };
    // Rescale to unit multivariate norm; exact already when the univariate
    // eigenfunctions are orthonormal, but guards against quadrature drift.
    for (m, nu) in eigenvalues.iter_mut().enumerate().take(total) {
        let comp = basis.component(m);
        let norm2 = basis.inner_product(&comp, &comp);
        if norm2 > 0.0 {
            let norm = norm2.sqrt();
            for ef in eigenfunctions.iter_mut() {
                ef.column_mut(m).scale_mut(1.0 / norm);
            }
            *nu *= norm2;
        }
    }
    basis.eigenfunctions = eigenfunctions;
    basis.eigenvalues = eigenvalues;
    debug_assert!(basis.eigenfunctions.iter().all(|e| e.nrows() == g));

    // Multivariate scores ρ_i = Σ_k √w_k Σ_j c_kj ξ_ikj.
    let mut stacked = DMatrix::zeros(first.scores.nrows(), total);
    for (a, u) in ufpcas.iter().enumerate() {
        stacked.columns_mut(offsets[a], u.num_components()).copy_from(&(&u.scores * w[a].sqrt()));
    }
    let scores = stacked * vecs;
    Ok((basis, scores))
}

/// Keeps the smallest number of components explaining `pve` of the total
/// variance.
pub fn truncate_basis(basis: &MfpcBasis, pve: f64) -> Result<MfpcBasis> {
    if !(pve > 0.0 && pve <= 1.0) {
        return Err(Error::Config(format!("pve {pve} outside (0, 1]")));
    }
    let positive: Vec<f64> = basis.eigenvalues.iter().copied().filter(|&v| v > 0.0).collect();
    let m = if positive.is_empty() { 1 } else { pve_count(&positive, pve) };
    basis.truncated(m)
}

/// Two-step estimation: per-marker mean fits and UFPCAs on the trimmed
/// subjects, followed by the multivariate combination.
pub fn estimate_mfpc_basis(
    data: &LongSurvDataset,
    mean_terms: &[Vec<Term>],
    options: &FpcaOptions,
) -> Result<MfpcaFit> {
    let k = data.num_markers;
    if mean_terms.len() != k {
        return Err(Error::Config(format!("{} mean term lists for {k} markers", mean_terms.len())));
    }
    let [lo, hi] = options.domain.unwrap_or([0.0, data.max_time()]);
    let grid = equidistant_grid(lo, hi, options.grid_points);
    let subjects = match options.trim {
        Some(rule) => trim_subjects_for_mfpca(data, rule, (lo, hi))?,
        None => (0..data.num_subjects()).collect(),
    };
    let trimmed = data.subset(&subjects);
    let ufpcas = (0..k)
        .into_par_iter()
        .map(|m| {
            let mean = estimate_marker_mean(&trimmed, m, &mean_terms[m], &grid)?;
            ufpca(m, &mean.residuals, &grid, mean.mean_on_grid, options.marginal_basis_size, options.univariate_pve)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut basis, mut scores) = combine_mfpca(&ufpcas, &options.weights)?;
    if let Some(pve) = options.multivariate_pve {
        basis = truncate_basis(&basis, pve)?;
        scores = scores.columns(0, basis.truncation).into_owned();
    }
    Ok(MfpcaFit { basis, ufpcas, subjects, scores })
}

/// Basis from known univariate component functions: the multivariate
/// eigenfunctions of a finite Karhunen–Loève process with coefficient
/// covariance `q` over the stacked functions `f` (per marker, `grid × J_k`).
///
/// With `G` the weighted Gram matrix of the stacked functions, the
/// eigenproblem `Q G a = ν a` is solved through the symmetric form
/// `G^{1/2} Q G^{1/2} v = ν v` and `a = G^{-1/2} v`, which makes every
/// `ψ_m = f a_m` unit-norm under the weighted scalar product.
pub fn basis_from_components(
    grid: &[f64],
    functions: &[DMatrix<f64>],
    gram: &DMatrix<f64>,
    q: &DMatrix<f64>,
    weights: &[f64],
) -> Result<MfpcBasis> {
    let total: usize = functions.iter().map(|f| f.ncols()).sum();
    if gram.shape() != (total, total) || q.shape() != (total, total) {
        return Err(Error::Config("gram/covariance shape does not match the stacked functions".into()));
    }
    // Weighted Gram matrix.
    let mut offsets = Vec::new();
    let mut o = 0;
    for f in functions {
        offsets.push(o);
        o += f.ncols();
    }
    let mut g = gram.clone();
    for (k, f) in functions.iter().enumerate() {
        for a in 0..f.ncols() {
            for b in 0..total {
                g[(offsets[k] + a, b)] *= weights[k].sqrt();
                g[(b, offsets[k] + a)] *= weights[k].sqrt();
            }
        }
    }
    let (gv, gvec) = sym_eigen_desc(&g);
    if gv.iter().any(|&v| v <= 0.0) {
        return Err(Error::Numerical("component functions are linearly dependent".into()));
    }
    let sqrt_g = &gvec * DMatrix::from_diagonal(&gv.map(f64::sqrt)) * gvec.transpose();
    let inv_sqrt_g = &gvec * DMatrix::from_diagonal(&gv.map(|v| 1.0 / v.sqrt())) * gvec.transpose();
    let a = &sqrt_g * q * &sqrt_g;
    let (vals, mut vecs) = sym_eigen_desc(&((&a + a.transpose()) * 0.5));
    normalize_signs(&mut vecs);
    let coef = inv_sqrt_g * &vecs;
    let eigenfunctions = functions.iter().enumerate().map(|(k, f)| f * coef.rows(offsets[k], f.ncols())).collect();
    let basis = MfpcBasis {
        grid: grid.to_vec(),
        weights: weights.to_vec(),
        eigenfunctions,
        eigenvalues: vals.iter().map(|v| v.max(0.0)).collect(),
        combination_weights: coef,
        truncation: total,
    };
    basis.validate()?;
    Ok(basis)
}

/// Gram matrix `∫ f_a f_b` of grid functions under trapezoid quadrature.
pub fn trapezoid_gram(grid: &[f64], f: &DMatrix<f64>) -> DMatrix<f64> {
    let w = DVector::from_vec(crate::quadrature::trapezoid_weights(grid));
    crate::linalg::weighted_crossprod(f, &w)
}
