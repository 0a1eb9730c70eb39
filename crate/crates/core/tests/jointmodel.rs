mod common;

use common::*;
use mfjm_core::jointmodel::sampler::inverse_gamma_conditional;
use mfjm_core::jointmodel::{
    fit, standardize_survival_designs, BlockKind, ChainConfig, FitOptions, FittedModel, JointModel, ModeConfig,
    ModelSpec, Predictor, Term, LOG_TIME,
};
use mfjm_core::quadrature::QuadratureConfig;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

const LN_2PI: f64 = 1.8378770664093453;

#[test]
fn scores_match_finite_differences() {
    for seed in 0..20 {
        let (model, state) = random_instance(seed);
        let worst = gradient_check(&model, &state);
        assert!(worst <= 0.0, "seed {seed}: gradient mismatch {worst:e}");
    }
}

#[test]
fn hessians_match_finite_difference_jacobians() {
    for seed in 0..20 {
        let (model, state) = random_instance(seed);
        let worst = hessian_check(&model, &state);
        assert!(worst <= 0.0, "seed {seed}: Hessian mismatch {worst:e}");
    }
}

#[test]
fn likelihood_factorises_exactly() {
    let (model, state) = random_instance(3);
    let joint = model.log_likelihood(&state).unwrap();
    assert_eq!(joint, model.loglik_long(&state.etas) + model.loglik_surv(&state.etas));
}

#[test]
fn censored_only_survival_likelihood_is_minus_cumulative_hazard() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut data = random_dataset(&mut rng, 6, 2, 3);
    for s in &mut data.subjects {
        s.event = false;
    }
    let basis = toy_basis(2, 2, data.max_time());
    let model = JointModel::new(rich_spec(2), data, basis).unwrap();
    let mut state = model.initial_state().unwrap();
    for b in 0..model.blocks.len() {
        let beta = DVector::from_fn(model.blocks[b].dim, |j, _| 0.1 * (j as f64 + 1.0));
        model.set_block(&mut state, b, beta);
    }
    let expected: f64 = -(0..model.num_subjects)
        .map(|i| model.cum_hazard(&state, i, model.data.subjects[i].time).unwrap())
        .sum::<f64>();
    let got = model.loglik_surv(&state.etas);
    assert!((got - expected).abs() < 1e-12 * expected.abs().max(1.0), "{got} vs {expected}");
}

fn weibull_spec() -> ModelSpec {
    let mut spec = ModelSpec::default_for(1)
        .with_terms(Predictor::Lambda, vec![Term::linear(&[LOG_TIME])])
        .with_terms(Predictor::Gamma, vec![Term::Intercept])
        .with_terms(Predictor::Alpha(0), vec![])
        .with_terms(Predictor::Sigma(0), vec![]);
    spec.standardize_survival = true;
    spec
}

#[test]
fn weibull_survival_likelihood_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = random_dataset(&mut rng, 8, 1, 3);
    let basis = toy_basis(1, 2, data.max_time());
    let model = JointModel::new(weibull_spec(), data, basis).unwrap();
    let (a, b, c) = (0.8_f64, 1.37_f64, -0.4_f64);
    let mut state = model.initial_state().unwrap();
    let lam = model.block_index("lambda.p").unwrap();
    let gam = model.block_index("gamma.p").unwrap();
    let lam_int = model.blocks[lam].to_internal(&DVector::from_vec(vec![b - 1.0])).unwrap();
    model.set_block(&mut state, lam, lam_int);
    model.set_block(&mut state, gam, DVector::from_vec(vec![c + (a * b).ln()]));
    let closed: f64 = model
        .data
        .subjects
        .iter()
        .map(|s| {
            let d = if s.event { 1.0 } else { 0.0 };
            d * ((a * b * s.time.powf(b - 1.0)).ln() + c) - c.exp() * a * s.time.powf(b)
        })
        .sum();
    let got = model.loglik_surv(&state.etas);
    assert!((got - closed).abs() < 1e-6 * closed.abs().max(1.0), "{got} vs {closed}");
}

#[test]
fn constant_hazard_cumulative_hazard_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = random_dataset(&mut rng, 4, 1, 2);
    let basis = toy_basis(1, 1, data.max_time());
    let spec = ModelSpec::default_for(1).with_terms(Predictor::Lambda, vec![]).with_terms(Predictor::Alpha(0), vec![]);
    let model = JointModel::new(spec, data, basis).unwrap();
    let mut state = model.initial_state().unwrap();
    let gam = model.block_index("gamma.p").unwrap();
    let c: f64 = 0.7;
    model.set_block(&mut state, gam, DVector::from_vec(vec![c]));
    for i in 0..model.num_subjects {
        let t = model.data.subjects[i].time;
        let u = 0.5 * t;
        assert!((model.cum_hazard(&state, i, u).unwrap() - u * c.exp()).abs() < 1e-13);
        assert!((state.etas.cumhaz[i] - t * c.exp()).abs() < 1e-13);
    }
    assert!(model.cum_hazard(&state, 0, 2.0 * model.data.subjects[0].time).is_err());
}

#[test]
fn zero_residuals_give_normalising_constant_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut data = random_dataset(&mut rng, 6, 2, 4);
    for obs in &mut data.longitudinal {
        for series in obs.iter_mut() {
            for o in series.iter_mut() {
                o.value = 2.5;
            }
        }
    }
    let basis = toy_basis(2, 2, data.max_time());
    let model = JointModel::new(rich_spec(2), data, basis).unwrap();
    let mut state = model.initial_state().unwrap();
    for (b, block) in model.blocks.iter().enumerate() {
        let beta = match block.predictor {
            Some(Predictor::Mu(_)) => DVector::from_fn(block.dim, |j, _| if j == 0 { 2.5 } else { 0.0 }),
            _ => DVector::zeros(block.dim),
        };
        model.set_block(&mut state, b, beta);
    }
    let n_obs: usize = (0..2).map(|k| model.data.num_observations(k)).sum();
    let ll = model.loglik_long(&state.etas);
    assert!((ll + 0.5 * n_obs as f64 * LN_2PI).abs() < 1e-10);
    // The σ score reduces to −X_σᵀ1 (prior gradient vanishes at zero).
    for k in 0..2 {
        let b = model.block_index(&format!("sigma{}.p", k + 1)).unwrap();
        let x = model.blocks[b].x_obs.as_ref().unwrap();
        let expected =
            -x.transpose() * DVector::from_element(x.nrows(), 1.0) - &model.blocks[b].penalty * &state.betas[b];
        assert!((model.score(&state, b) - &expected).amax() < 1e-12);
        assert!((model.hessian(&state, b) + &model.blocks[b].penalty).amax() < 1e-12);
    }
}

#[test]
fn gamma_score_without_events_or_association() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut data = random_dataset(&mut rng, 6, 1, 2);
    for s in &mut data.subjects {
        s.event = false;
    }
    let basis = toy_basis(1, 1, data.max_time());
    let mut spec = rich_spec(1).with_terms(Predictor::Alpha(0), vec![]);
    spec.standardize_survival = false;
    let model = JointModel::new(spec, data, basis).unwrap();
    let mut state = model.initial_state().unwrap();
    let gam = model.block_index("gamma.p").unwrap();
    model.set_block(&mut state, gam, DVector::from_vec(vec![-0.3, 0.4]));
    let x = model.blocks[gam].x_surv.as_ref().unwrap();
    let expected = -x.transpose() * &state.etas.cumhaz - &model.blocks[gam].penalty * &state.betas[gam];
    assert!((model.score(&state, gam) - expected).amax() < 1e-12);
}

#[test]
fn mode_of_gaussian_model_is_penalised_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data = random_dataset(&mut rng, 20, 1, 5);
    let basis = toy_basis(1, 2, data.max_time());
    let model = JointModel::new(gaussian_spec(1, 0.8), data, basis).unwrap();
    let config = ModeConfig { max_cycles: 2000, tolerance: 0.0, ..ModeConfig::default() };
    let mode = model.posterior_mode(None, &config).unwrap();
    let (_, oracle) = gaussian_posterior(&model, 0.8);
    let mu = model.block_index("mu1.p").unwrap();
    let mut est: Vec<f64> = mode.state.betas[mu].iter().copied().collect();
    for b in model.score_blocks() {
        est.extend(mode.state.betas[b].iter());
    }
    for (e, o) in est.iter().zip(oracle.iter()) {
        assert!((e - o).abs() < 1e-8, "{e} vs {o}");
    }

    // One Newton step solves each exactly quadratic block: after a single
    // cycle the last block is at its conditional optimum.
    let one = model.posterior_mode(None, &ModeConfig { max_cycles: 1, ..config }).unwrap();
    let last = model.blocks.len() - 1;
    assert!(model.score(&one.state, last).amax() < 1e-8);
}

#[test]
fn block_without_observations_stays_at_prior_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut data = random_dataset(&mut rng, 10, 2, 4);
    for obs in &mut data.longitudinal {
        obs[1].clear();
    }
    let basis = toy_basis(2, 2, data.max_time());
    let model = JointModel::new(gaussian_spec(2, 1.0), data, basis).unwrap();
    let mode = model.posterior_mode(None, &ModeConfig::default()).unwrap();
    let b = model.block_index("mu2.p").unwrap();
    assert!(mode.state.betas[b].amax() < 1e-12);
}

fn linear_hazard_spec(standardize: bool) -> ModelSpec {
    let mut spec = ModelSpec::default_for(1)
        .with_terms(Predictor::Lambda, vec![Term::linear(&["t"])])
        .with_terms(Predictor::Gamma, vec![Term::Intercept, Term::linear(&["x"])])
        .with_terms(Predictor::Alpha(0), vec![])
        .with_terms(Predictor::Sigma(0), vec![]);
    spec.standardize_survival = standardize;
    spec
}

#[test]
fn standardisation_leaves_the_mode_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let data = random_dataset(&mut rng, 40, 1, 3);
    let basis = toy_basis(1, 1, data.max_time());
    let config = ModeConfig { max_cycles: 5000, tolerance: 0.0, survival_step: 1.0, ..ModeConfig::default() };
    let mut eta = Vec::new();
    for standardize in [true, false] {
        let model = JointModel::new(linear_hazard_spec(standardize), data.clone(), basis.clone()).unwrap();
        assert_eq!(model.blocks[model.block_index("gamma.p").unwrap()].transform.is_some(), standardize);
        let mode = model.posterior_mode(None, &config).unwrap();
        let e = &mode.state.etas;
        eta.push(DVector::from_fn(model.num_subjects, |i, _| e.lambda_surv[i] + e.gamma[i]));
    }
    let diff = (&eta[0] - &eta[1]).amax();
    assert!(diff < 1e-8, "max |Δη| = {diff:e}");
}

#[test]
fn standardisation_transform_properties() {
    let n = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let m = raw.iter().sum::<f64>() / n as f64;
    let sd = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    let z: Vec<f64> = raw.iter().map(|v| (v - m) / sd).collect();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { z[i] });
    let (xs, t) = standardize_survival_designs(&x);
    assert!((&xs - &x).amax() < 1e-12);
    assert!((t - DMatrix::identity(2, 2)).amax() < 1e-12);

    let c = DMatrix::from_element(n, 2, 3.0);
    let (cs, t) = standardize_survival_designs(&c);
    assert_eq!(cs, c);
    assert_eq!(t, DMatrix::identity(2, 2));

    // Centred and scaled columns; coefficients map back exactly.
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { raw[i] });
    let (xs, t) = standardize_survival_designs(&x);
    assert!(xs.column(1).mean().abs() < 1e-12);
    assert!((xs.column(1).variance() - 1.0).abs() < 1e-12);
    let beta_int = DVector::from_vec(vec![0.3, -1.2]);
    assert!((&xs * &beta_int - &x * (t * &beta_int)).amax() < 1e-12);
}

#[test]
fn every_coefficient_belongs_to_one_block() {
    let (model, _) = random_instance(1);
    let scores: Vec<_> = model.blocks.iter().filter(|b| matches!(b.kind, BlockKind::Score { .. })).collect();
    assert_eq!(scores.len(), model.num_components);
    assert!(scores.iter().all(|b| b.dim == model.num_subjects));
    let mut labels: Vec<&String> = model.blocks.iter().flat_map(|b| &b.labels).collect();
    let total = labels.len();
    labels.sort();
    labels.dedup();
    assert_eq!(labels.len(), total);
}

#[test]
fn inverse_gamma_full_conditional() {
    let (shape, rate) = inverse_gamma_conditional(0.001, 0.001, 10, 4.0);
    assert!((shape - 5.001).abs() < 1e-12);
    assert!((rate - 2.001).abs() < 1e-12);
    // The drawn variances follow IG(shape, rate): mean rate / (shape − 1).
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Gamma::new(shape, 1.0 / rate).unwrap();
    let n = 200_000;
    let mean = (0..n).map(|_| 1.0 / g.sample(&mut rng)).sum::<f64>() / n as f64;
    assert!((mean / (rate / (shape - 1.0)) - 1.0).abs() < 0.01);
}

#[test]
fn sampler_reproduces_conjugate_gaussian_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let data = random_dataset(&mut rng, 30, 1, 5);
    let basis = toy_basis(1, 2, data.max_time());
    let model = JointModel::new(gaussian_spec(1, 1.0), data, basis).unwrap();
    let chain_cfg = ChainConfig { iterations: 5500, burnin: 500, thin: 1, seed: 3 };
    let start = model.initial_state().unwrap();
    let chain = model.mcmc_sample(start, &chain_cfg).unwrap();
    let mu = model.block_index("mu1.p").unwrap();
    assert_eq!(chain.samples[mu].nrows(), 5000);
    for b in model.score_blocks().chain([mu]) {
        assert!(chain.min_accept_prob[b] > 1.0 - 1e-9, "block {b}: {}", chain.min_accept_prob[b]);
    }
    let (prec, mean) = gaussian_posterior(&model, 1.0);
    let cov = prec.try_inverse().unwrap();
    let s = &chain.samples[mu];
    for j in 0..s.ncols() {
        let col: Vec<f64> = s.column(j).iter().copied().collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        assert!((m - mean[j]).abs() < 3.0 * batch_se(&col, 50), "mean {j}: {m} vs {}", mean[j]);
        for l in 0..=j {
            let prod: Vec<f64> = (0..s.nrows()).map(|d| (s[(d, j)] - mean[j]) * (s[(d, l)] - mean[l])).collect();
            let c = prod.iter().sum::<f64>() / prod.len() as f64;
            assert!((c - cov[(j, l)]).abs() < 3.0 * batch_se(&prod, 50), "cov ({j},{l}): {c} vs {}", cov[(j, l)]);
        }
    }
}

#[test]
fn fitted_model_round_trips_through_csv_and_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let data = random_dataset(&mut rng, 12, 2, 4);
    let basis = toy_basis(2, 2, data.max_time());
    let mut spec = rich_spec(2);
    spec.quadrature = QuadratureConfig::default();
    let model = JointModel::new(spec, data, basis).unwrap();
    let options =
        FitOptions { chain: ChainConfig { iterations: 60, burnin: 20, thin: 2, seed: 9 }, ..Default::default() };
    let fitted = fit(&model, &options).unwrap();
    assert_eq!(fitted.num_draws(), 20);
    assert!(fitted.tau2.iter().flatten().flatten().all(|&v| v > 0.0));
    let mut csv = Vec::new();
    fitted.write_samples_csv(&mut csv).unwrap();
    let mut restored = FittedModel::from_json(&fitted.to_json().unwrap()).unwrap();
    restored.read_samples_csv(csv.as_slice()).unwrap();
    assert_eq!(restored, fitted);
    let again = fit(&model, &options).unwrap();
    assert_eq!(again, fitted);
    let summary = fitted.summary().unwrap();
    assert_eq!(summary.len(), model.blocks.len());
    for s in summary.iter().flat_map(|b| &b.coefficients) {
        assert!(s.q025 <= s.mean && s.mean <= s.q975);
    }
    let times: Vec<Vec<f64>> = model.data.subjects.iter().map(|s| vec![s.time]).collect();
    let draws = fitted.predictor_draws(&model, Predictor::Mu(0), &times).unwrap();
    assert_eq!(draws.shape(), (12, 20));
    let _ = rng.random::<f64>();
}

#[test]
fn sampler_targets_non_gaussian_exponential_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut data = random_dataset(&mut rng, 15, 1, 2);
    for (i, s) in data.subjects.iter_mut().enumerate() {
        s.event = i % 3 != 0;
    }
    let basis = toy_basis(1, 1, data.max_time());
    let spec = ModelSpec::default_for(1).with_terms(Predictor::Lambda, vec![]).with_terms(Predictor::Alpha(0), vec![]);
    let model = JointModel::new(spec, data, basis).unwrap();
    let d: f64 = model.delta.sum();
    let exposure: f64 = model.data.subjects.iter().map(|s| s.time).sum();
    // Posterior of γ: exp(dγ − e^γ S − γ²/(2·1000²)), integrated numerically.
    let log_post = |g: f64| d * g - g.exp() * exposure - 0.5 * g * g / 1e6;
    let centre = (d / exposure).ln();
    let grid: Vec<f64> = (0..=20000).map(|j| centre - 4.0 + 8.0 * j as f64 / 20000.0).collect();
    let w: Vec<f64> = grid.iter().map(|&g| (log_post(g) - log_post(centre)).exp()).collect();
    let z: f64 = w.iter().sum();
    let mean: f64 = grid.iter().zip(&w).map(|(g, w)| g * w).sum::<f64>() / z;
    let var: f64 = grid.iter().zip(&w).map(|(g, w)| (g - mean).powi(2) * w).sum::<f64>() / z;

    let chain = model
        .mcmc_sample(model.initial_state().unwrap(), &ChainConfig { iterations: 10500, burnin: 500, thin: 1, seed: 5 })
        .unwrap();
    let gam = model.block_index("gamma.p").unwrap();
    let draws: Vec<f64> = chain.samples[gam].column(0).iter().copied().collect();
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let sq: Vec<f64> = draws.iter().map(|g| (g - mean).powi(2)).collect();
    let v = sq.iter().sum::<f64>() / sq.len() as f64;
    assert!((m - mean).abs() < 3.0 * batch_se(&draws, 50), "mean {m} vs {mean}");
    assert!((v - var).abs() < 3.0 * batch_se(&sq, 50), "variance {v} vs {var}");
    assert!(chain.acceptance[gam] > 0.8);
}
