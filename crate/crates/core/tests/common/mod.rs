//! Small synthetic instances shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mfjm_core::fpca::MfpcBasis;
use mfjm_core::jointmodel::{JointModel, ModelSpec, Predictor, SmoothTerm, State, Term, VariancePrior};
use mfjm_core::quadrature::equidistant_grid;
use mfjm_core::{LongSurvDataset, Observation, Subject};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random dataset with `n` subjects, `k` markers and a binary covariate `x`.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, k: usize, max_obs: usize) -> LongSurvDataset {
    let mut subjects = Vec::new();
    let mut longitudinal = Vec::new();
    for i in 0..n {
        let time = rng.random_range(0.3..1.0);
        let event = rng.random::<f64>() < 0.6;
        let mut covariates = BTreeMap::new();
        covariates.insert("x".to_string(), (i % 2) as f64);
        subjects.push(Subject { id: format!("s{i}"), time, event, covariates });
        let per_marker = (0..k)
            .map(|_| {
                let count = rng.random_range(1..=max_obs);
                (0..count)
                    .map(|j| Observation {
                        time: if j == 0 { 0.0 } else { rng.random_range(0.0..time) },
                        value: rng.sample::<f64, _>(StandardNormal),
                    })
                    .collect()
            })
            .collect();
        longitudinal.push(per_marker);
    }
    LongSurvDataset::new(subjects, longitudinal, k).unwrap()
}

/// Smooth, non-orthogonal two-component basis on `[0, upper]`.
pub fn toy_basis(k: usize, m: usize, upper: f64) -> MfpcBasis {
    let grid = equidistant_grid(0.0, upper, 41);
    let eigenfunctions = (0..k)
        .map(|kk| {
            DMatrix::from_fn(grid.len(), m, |g, j| {
                let t = grid[g];
                let phase = 0.7 * kk as f64 + 1.3 * j as f64;
                (std::f64::consts::PI * (j as f64 + 1.0) * t + phase).sin() + 0.2 * (kk as f64 + 1.0)
            })
        })
        .collect();
    MfpcBasis {
        grid,
        weights: vec![1.0; k],
        eigenfunctions,
        eigenvalues: (0..m).map(|j| 1.0 / (j as f64 + 1.0)).collect(),
        combination_weights: DMatrix::zeros(0, 0),
        truncation: m,
    }
}

/// Model with every kind of term in every predictor.
pub fn rich_spec(k: usize) -> ModelSpec {
    let mut spec = ModelSpec::default_for(k);
    spec = spec
        .with_terms(Predictor::Lambda, vec![Term::Smooth(SmoothTerm::new("t", 6, 3, 2)), Term::linear(&["t"])])
        .with_terms(Predictor::Gamma, vec![Term::Intercept, Term::linear(&["x"])]);
    for kk in 0..k {
        spec = spec
            .with_terms(Predictor::Alpha(kk), vec![Term::Intercept, Term::linear(&["t"])])
            .with_terms(Predictor::Mu(kk), vec![Term::Intercept, Term::linear(&["t"]), Term::Mfpc])
            .with_terms(Predictor::Sigma(kk), vec![Term::Intercept, Term::linear(&["x"])]);
    }
    spec
}

/// Random small instance (n = 5, K = 2, M = 2) with random coefficients.
pub fn random_instance(seed: u64) -> (JointModel, State) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = random_dataset(&mut rng, 5, 2, 4);
    let basis = toy_basis(2, 2, data.max_time());
    let model = JointModel::new(rich_spec(2), data, basis).unwrap();
    let betas: Vec<DVector<f64>> = model
        .blocks
        .iter()
        .map(|b| DVector::from_fn(b.dim, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let tau2 = model.blocks.iter().map(|_| rng.random_range(0.5..2.0)).collect();
    let state = model.state(betas, tau2).unwrap();
    (model, state)
}

/// Log-posterior after replacing block `b` (computed from scratch).
pub fn log_posterior_at(model: &JointModel, state: &State, b: usize, beta: &DVector<f64>) -> f64 {
    let mut betas = state.betas.clone();
    betas[b] = beta.clone();
    let s = model.state(betas, state.tau2.clone()).unwrap();
    model.log_posterior(&s)
}

/// Analytic score of block `b` at a replaced coefficient vector.
pub fn score_at(model: &JointModel, state: &State, b: usize, beta: &DVector<f64>) -> DVector<f64> {
    let mut betas = state.betas.clone();
    betas[b] = beta.clone();
    let s = model.state(betas, state.tau2.clone()).unwrap();
    model.score(&s, b)
}

/// Largest violation of `|a − f| ≤ rel·max(|a|, |f|) + abs` (≤ 0 means pass).
pub fn worst_violation(a: &[f64], f: &[f64], rel: f64, abs: f64) -> f64 {
    a.iter().zip(f).map(|(&a, &f)| (a - f).abs() - (rel * a.abs().max(f.abs()) + abs)).fold(f64::NEG_INFINITY, f64::max)
}

/// Central finite-difference gradient check over all blocks; returns the
/// worst violation.
pub fn gradient_check(model: &JointModel, state: &State) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for b in 0..model.blocks.len() {
        let analytic = model.score(state, b);
        let beta = &state.betas[b];
        let fd: Vec<f64> = (0..beta.len())
            .map(|j| {
                let h = 1e-6 * beta[j].abs().max(1.0);
                let mut up = beta.clone();
                up[j] += h;
                let mut down = beta.clone();
                down[j] -= h;
                (log_posterior_at(model, state, b, &up) - log_posterior_at(model, state, b, &down)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(worst_violation(analytic.as_slice(), &fd, 1e-4, 1e-6));
    }
    worst
}

/// Finite-difference Jacobian of the score vs the analytic Hessian for
/// every block; returns the worst violation.
pub fn hessian_check(model: &JointModel, state: &State) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for b in 0..model.blocks.len() {
        let analytic = model.hessian(state, b);
        let beta = &state.betas[b];
        let d = beta.len();
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let h = 1e-5 * beta[j].abs().max(1.0);
            let mut up = beta.clone();
            up[j] += h;
            let mut down = beta.clone();
            down[j] -= h;
            let col = (score_at(model, state, b, &up) - score_at(model, state, b, &down)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let floor = 1e-6 * analytic.amax().max(1.0);
        worst = worst.max(worst_violation(analytic.as_slice(), jac.as_slice(), 1e-3, floor));
    }
    worst
}

/// Longitudinal-only model for `k` markers: mean `intercept + t + MFPC`,
/// no association and unit noise unless `sigma_terms` are given.
pub fn gaussian_spec(k: usize, tau2: f64) -> ModelSpec {
    let mut spec = ModelSpec::default_for(k);
    spec.mfpc_prior = VariancePrior::Fixed { value: tau2 };
    spec = spec.with_terms(Predictor::Lambda, vec![]).with_terms(Predictor::Gamma, vec![Term::Intercept]);
    for kk in 0..k {
        spec = spec
            .with_terms(Predictor::Alpha(kk), vec![])
            .with_terms(Predictor::Mu(kk), vec![Term::Intercept, Term::linear(&["t"]), Term::Mfpc])
            .with_terms(Predictor::Sigma(kk), vec![]);
    }
    spec
}

/// Posterior precision and mean of `(β_μ, ρ)` in a linear-Gaussian model
/// with unit noise.
pub fn gaussian_posterior(model: &JointModel, tau2: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mu = model.block_index("mu1.p").unwrap();
    let xp = model.blocks[mu].x_obs.as_ref().unwrap();
    let n = model.num_subjects;
    let m = model.num_components;
    let rows = &model.markers[0];
    let d = xp.ncols() + n * m;
    let mut x = DMatrix::zeros(rows.y.len(), d);
    x.view_mut((0, 0), xp.shape()).copy_from(xp);
    for (r, &i) in rows.subject.iter().enumerate() {
        for mm in 0..m {
            x[(r, xp.ncols() + mm * n + i)] = rows.psi[(r, mm)];
        }
    }
    let mut prec = x.transpose() * &x;
    let p = &model.blocks[mu].penalty;
    for j in 0..xp.ncols() {
        for l in 0..xp.ncols() {
            prec[(j, l)] += p[(j, l)];
        }
    }
    for j in xp.ncols()..d {
        prec[(j, j)] += 1.0 / tau2;
    }
    let mean = prec.clone().cholesky().unwrap().solve(&(x.transpose() * &rows.y));
    (prec, mean)
}

/// Standard error of the mean by non-overlapping batch means.
pub fn batch_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Orthonormal shifted Legendre polynomials on [0, 1].
pub fn legendre(j: usize, t: f64) -> f64 {
    match j {
        0 => 1.0,
        1 => 3f64.sqrt() * (2.0 * t - 1.0),
        2 => 5f64.sqrt() * (6.0 * t * t - 6.0 * t + 1.0),
        _ => unreachable!(),
    }
}

/// Scores with sample mean zero and sample covariance exactly `diag(nu)`.
pub fn exact_scores(rng: &mut ChaCha8Rng, n: usize, nu: &[f64]) -> DMatrix<f64> {
    let m = nu.len();
    let mut z: DMatrix<f64> = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng));
    for mut c in z.column_iter_mut() {
        let mean = c.mean();
        c.add_scalar_mut(-mean);
    }
    let cov = z.transpose() * &z / (n as f64 - 1.0);
    let l = cov.cholesky().unwrap().l();
    let white = l.solve_lower_triangular(&z.transpose()).unwrap().transpose();
    DMatrix::from_fn(n, m, |i, j| white[(i, j)] * nu[j].sqrt())
}

/// Dense, noiseless data from a three-component kernel. Component `m` is
/// `(cos θ_m P_m, sin θ_m P_(m+1 mod 3))`, which is orthonormal under unit
/// weights; with one marker it is `P_m`.
pub fn dense_dataset(n: usize, k: usize, nu: &[f64], seed: u64) -> LongSurvDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = exact_scores(&mut rng, n, nu);
    let theta = [0.4, 1.0, 0.7];
    let times = equidistant_grid(0.0, 1.0, 21);
    let value = |kk: usize, m: usize, t: f64| match (k, kk) {
        (1, _) => legendre(m, t),
        (_, 0) => f64::cos(theta[m]) * legendre(m, t),
        _ => f64::sin(theta[m]) * legendre((m + 1) % 3, t),
    };
    let subjects =
        (0..n).map(|i| Subject { id: format!("{i}"), time: 1.0, event: false, covariates: BTreeMap::new() }).collect();
    let longitudinal = (0..n)
        .map(|i| {
            (0..k)
                .map(|kk| {
                    times
                        .iter()
                        .map(|&t| Observation {
                            time: t,
                            value: (0..nu.len()).map(|m| scores[(i, m)] * value(kk, m, t)).sum(),
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    LongSurvDataset::new(subjects, longitudinal, k).unwrap()
}
