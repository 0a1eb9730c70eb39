use mfjm_core::simgen::{
    build_scenario_i, build_scenario_ii, dataset_stats, draw_kl_random_effects, draw_survival_time, PreparedScenario,
    SimScenario,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn replicate_stats(scenario: SimScenario, reps: u64) -> (f64, f64, f64, usize, usize) {
    let p = PreparedScenario::new(scenario).unwrap();
    let stats: Vec<_> = (0..reps).into_par_iter().map(|s| dataset_stats(&p.simulate(1000 + s).unwrap().0)).collect();
    let r = reps as f64;
    (
        stats.iter().map(|s| s.event_rate).sum::<f64>() / r,
        stats.iter().map(|s| s.mean_follow_up).sum::<f64>() / r,
        stats.iter().map(|s| s.mean_observations).sum::<f64>() / r,
        stats.iter().map(|s| s.min_observations).min().unwrap(),
        stats.iter().map(|s| s.max_observations).max().unwrap(),
    )
}

#[test]
fn scenario_i_matches_target_statistics() {
    let (ev, fu, obs, lo, hi) = replicate_stats(build_scenario_i(), 20);
    println!("scenario I: events {ev:.4} follow-up {fu:.4} obs {obs:.2} range {lo}-{hi}");
    assert!((ev - 0.43).abs() <= 0.03);
    assert!((fu - 0.52).abs() <= 0.03);
    assert!((obs - 63.0).abs() <= 4.0);
    assert!(lo >= 6 && hi <= 90);
}

#[test]
fn scenario_ii_matches_target_statistics() {
    let (ev, fu, obs, lo, hi) = replicate_stats(build_scenario_ii(), 20);
    println!("scenario II: events {ev:.4} follow-up {fu:.4} obs {obs:.2} range {lo}-{hi}");
    assert!((ev - 0.57).abs() <= 0.03);
    assert!((fu - 0.60).abs() <= 0.03);
    assert!((obs - 24.0).abs() <= 2.0);
    assert!(lo >= 2 && hi <= 30);
}

#[test]
fn constant_hazard_draws_are_exponential() {
    let h: f64 = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Horizon long enough that truncation is negligible (e^{-3·20}).
    let n = 100_000;
    let mean = (0..n).map(|_| draw_survival_time(&|_| Ok(h.ln()), 20.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
    assert!((mean * h - 1.0).abs() < 0.02, "mean {mean}");
}

#[test]
fn kl_scores_have_target_variances() {
    let p = PreparedScenario::new(build_scenario_ii()).unwrap();
    let n = 100_000;
    let (scores, traj) = draw_kl_random_effects(&p, n, 11).unwrap();
    let col = |j: usize| scores.column(j).iter().copied().collect::<Vec<f64>>();
    let (a, b) = (col(0), col(1));
    let var0 = a.iter().map(|v| v * v).sum::<f64>() / n as f64;
    assert!((var0 / 1.376 - 1.0).abs() < 0.02, "var {var0}");
    let cov01 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
    let se = (1.376f64 * 0.531 / n as f64).sqrt();
    assert!(cov01.abs() < 3.0 * se, "cov {cov01} se {se}");

    // Empirical covariance surface of b^(1) against the analytic kernel.
    let basis = p.scenario.process.true_basis(&p.grid).unwrap();
    let ef = &basis.eigenfunctions[0];
    let t1 = &traj[0];
    let mut worst: f64 = 0.0;
    let scale = (0..ef.nrows())
        .map(|g| (0..6).map(|m| basis.eigenvalues[m] * ef[(g, m)].powi(2)).sum::<f64>())
        .fold(0.0, f64::max);
    for g in (0..101).step_by(10) {
        for h in (0..101).step_by(10) {
            let emp = t1.column(g).dot(&t1.column(h)) / n as f64;
            let kernel: f64 = (0..6).map(|m| basis.eigenvalues[m] * ef[(g, m)] * ef[(h, m)]).sum();
            worst = worst.max((emp - kernel).abs() / scale);
        }
    }
    assert!(worst < 0.03, "relative kernel deviation {worst}");
}

#[test]
fn tiny_follow_up_yields_only_baseline_observations() {
    let p = PreparedScenario::new(build_scenario_i()).unwrap();
    let truth = mfjm_core::simgen::SubjectTruth {
        covariate: 0.0,
        scores: vec![0.0; 12],
        event_time: 0.001,
        censoring_time: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let obs = p.sample_observations(&truth, 0.001, &mut rng).unwrap();
    assert_eq!(obs.len(), 6);
    assert!(obs.iter().all(|s| s.len() == 1 && s[0].time == 0.0));
}

#[test]
fn truth_with_events_beyond_the_cap_round_trips_through_json() {
    let mut scenario = build_scenario_ii();
    scenario.n = 30;
    let (_, truth) = PreparedScenario::new(scenario).unwrap().simulate(5).unwrap();
    assert!(truth.subjects.iter().any(|s| s.event_time.is_infinite()));
    let text = serde_json::to_string(&truth).unwrap();
    let back: mfjm_core::simgen::SimTruth = serde_json::from_str(&text).unwrap();
    assert_eq!(back, truth);
}
