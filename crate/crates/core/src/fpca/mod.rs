//! Univariate and multivariate functional principal component analysis for
//! sparse, irregularly observed longitudinal markers.

mod basis;
mod mfpca;
mod smoothing;
mod ufpca;

pub use basis::MfpcBasis;
pub use mfpca::{
    basis_from_components, combine_mfpca, estimate_mfpc_basis, trapezoid_gram, trim_subjects_for_mfpca, truncate_basis,
    FpcaOptions, MfpcaFit, TrimRule, WeightMode,
};
pub use ufpca::{
    eigen_decompose_covariance, estimate_marker_mean, predict_scores_ce, pve_count, smooth_covariance, ufpca,
    CovarianceSurface, MarkerMean, UfpcaResult, MIN_ERROR_VARIANCE,
};
