mod common;

use common::{dense_dataset, legendre};
use mfjm_core::fpca::{
    basis_from_components, estimate_mfpc_basis, trapezoid_gram, trim_subjects_for_mfpca, truncate_basis, FpcaOptions,
    MfpcBasis, TrimRule,
};
use mfjm_core::jointmodel::Term;
use mfjm_core::quadrature::equidistant_grid;
use mfjm_core::simgen::{build_scenario_ii, PreparedScenario};
use nalgebra::DMatrix;

fn intercept_only(k: usize) -> Vec<Vec<Term>> {
    vec![vec![Term::Intercept]; k]
}

fn dense_options() -> FpcaOptions {
    FpcaOptions { univariate_pve: 0.999, trim: None, ..FpcaOptions::default() }
}

fn max_identity_deviation(g: &DMatrix<f64>) -> f64 {
    (g - DMatrix::identity(g.nrows(), g.ncols())).abs().max()
}

#[test]
fn eigenvalues_of_a_dense_three_component_kernel_are_recovered() {
    let nu = [2.0, 1.0, 0.5];
    let data = dense_dataset(500, 2, &nu, 11);
    let fit = estimate_mfpc_basis(&data, &intercept_only(2), &dense_options()).unwrap();
    let est = &fit.basis.eigenvalues;
    println!("estimated eigenvalues {est:?}");
    assert!(est.len() >= 3);
    for (e, t) in est.iter().zip(&nu) {
        assert!((e - t).abs() / t < 0.05, "{e} vs {t}");
    }
    // Smoothing leaves small spurious components carrying little variance.
    let total: f64 = est.iter().sum();
    assert!(est[3..].iter().sum::<f64>() / total < 0.03);
}

#[test]
fn estimated_bases_are_orthonormal() {
    let data = dense_dataset(200, 2, &[2.0, 1.0, 0.5], 3);
    let basis = estimate_mfpc_basis(&data, &intercept_only(2), &dense_options()).unwrap().basis;
    assert!(max_identity_deviation(&basis.gram()) < 1e-6);

    let p = PreparedScenario::new(build_scenario_ii()).unwrap();
    let (sim, _) = p.simulate(77).unwrap();
    let terms = vec![vec![Term::Intercept, Term::linear(&["t"]), Term::linear(&["x"])]; 2];
    let fit = estimate_mfpc_basis(&sim, &terms, &FpcaOptions::default()).unwrap();
    assert!(max_identity_deviation(&fit.basis.gram()) < 1e-6);
    for u in &fit.ufpcas {
        let g = trapezoid_gram(&u.grid, &u.eigenfunctions);
        assert!(max_identity_deviation(&g) < 1e-6);
    }
    // Estimated eigenvalues are nonincreasing and nonnegative.
    assert!(fit.basis.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    assert!(fit.basis.eigenvalues.iter().all(|&v| v >= 0.0));
    assert_eq!(fit.scores.shape(), (fit.subjects.len(), fit.basis.num_components()));
}

#[test]
fn single_marker_mfpca_equals_univariate_fpca() {
    let data = dense_dataset(150, 1, &[2.0, 1.0, 0.5], 5);
    let fit = estimate_mfpc_basis(&data, &intercept_only(1), &dense_options()).unwrap();
    let u = &fit.ufpcas[0];
    assert_eq!(fit.basis.num_components(), u.num_components());
    for m in 0..u.num_components() {
        assert!((fit.basis.eigenvalues[m] - u.eigenvalues[m]).abs() < 1e-10 * u.eigenvalues[0]);
        let a = fit.basis.eigenfunctions[0].column(m);
        let b = u.eigenfunctions.column(m);
        let same = (a - b).abs().max();
        let flipped = (a + b).abs().max();
        assert!(same.min(flipped) < 1e-10, "component {m}: {same} / {flipped}");
        let sa = fit.scores.column(m);
        let sb = u.scores.column(m);
        assert!((sa - sb).abs().max().min((sa + sb).abs().max()) < 1e-10);
    }
}

#[test]
fn truncation_and_serialisation() {
    let data = dense_dataset(120, 2, &[2.0, 1.0, 0.5], 8);
    let basis = estimate_mfpc_basis(&data, &intercept_only(2), &dense_options()).unwrap().basis;
    let total: f64 = basis.eigenvalues.iter().filter(|v| **v > 0.0).sum();
    let t = truncate_basis(&basis, 0.5).unwrap();
    assert_eq!(t.num_components(), 1);
    assert!(basis.eigenvalues[0] / total >= 0.5);
    let t = truncate_basis(&basis, 0.95).unwrap();
    assert_eq!(t.num_components(), 3);
    assert!(truncate_basis(&basis, 0.0).is_err());
    assert!(basis.with_truncation(0).is_err());
    let back = MfpcBasis::from_json(&t.to_json().unwrap()).unwrap();
    assert_eq!(back.num_components(), 3);
    for k in 0..2 {
        assert!((&back.eigenfunctions[k] - &t.eigenfunctions[k]).abs().max() < 1e-12);
    }
    assert_eq!(back.eval(0, 0.5).unwrap().len(), 3);
    assert!(back.eval(0, 1.5).is_err());
}

#[test]
fn trimming_keeps_subjects_with_late_observations() {
    let mut data = dense_dataset(4, 2, &[1.0, 0.5, 0.25], 9);
    data.longitudinal[1][0].retain(|o| o.time <= 0.1);
    data.longitudinal[2][1].retain(|o| o.time <= 0.3);
    let kept = trim_subjects_for_mfpca(&data, TrimRule { fraction: 0.4, min_observations: 0 }, (0.0, 1.0)).unwrap();
    assert_eq!(kept, vec![0, 3]);
    let kept = trim_subjects_for_mfpca(&data, TrimRule { fraction: 0.05, min_observations: 0 }, (0.0, 1.0)).unwrap();
    assert_eq!(kept, vec![0, 1, 2, 3]);
    let kept = trim_subjects_for_mfpca(&data, TrimRule { fraction: 0.05, min_observations: 5 }, (0.0, 1.0)).unwrap();
    assert_eq!(kept, vec![0, 2, 3]);
    assert!(trim_subjects_for_mfpca(&data, TrimRule { fraction: 1.0, min_observations: 0 }, (0.0, 1.0)).is_err());
}

#[test]
fn known_components_give_the_kernel_eigenvalues() {
    let grid = equidistant_grid(0.0, 1.0, 401);
    let f = DMatrix::from_fn(grid.len(), 3, |g, j| legendre(j, grid[g]));
    let gram = trapezoid_gram(&grid, &f);
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 2.0, 1.0]));
    let basis = basis_from_components(&grid, &[f], &gram, &q, &[1.0]).unwrap();
    let want = [2.0, 1.0, 0.5];
    // The quadrature Gram matrix is only close to the identity.
    for (e, w) in basis.eigenvalues.iter().zip(want) {
        assert!((e - w).abs() < 1e-4 * w, "{e} vs {w}");
    }
    assert!(max_identity_deviation(&basis.gram()) < 1e-10);
}
