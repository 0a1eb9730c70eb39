use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mfjm_core::data::{LongSurvDataset, Observation, Subject};
use mfjm_core::evalkit::EvalReport;
use mfjm_core::fpca::{estimate_mfpc_basis, pve_count, FpcaOptions, MfpcBasis};
use mfjm_core::jointmodel::{FittedModel, Term};
use mfjm_core::quadrature::equidistant_grid;
use tempfile::tempdir;

fn mfjm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfjm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mfjm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_basis(p: &Path) -> MfpcBasis {
    MfpcBasis::from_json(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_writes_the_documented_files() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("sim");
    ok(&["simulate", "--scenario", "I", "--n", "150", "--seed", "1", "--out", path(&out)]);
    for f in ["survival.csv", "longitudinal.csv", "scenario.json", "truth.json", "model.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let data = LongSurvDataset::read_csv(&out, None).unwrap();
    assert_eq!(data.num_subjects(), 150);
    assert_eq!(data.num_markers, 6);
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("scenario.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 1);

    let again = dir.path().join("again");
    ok(&["simulate", "--scenario", "I", "--n", "150", "--seed", "1", "--out", path(&again)]);
    for f in ["survival.csv", "longitudinal.csv", "truth.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let out = mfjm(&["simulate", "--scenario", "II", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    assert_eq!(mfjm(&["simulate", "--bogus"]).status.code(), Some(2));
    let out = mfjm(&["replicate-study", "--seed", "1", "--basis", "guess", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_settings_are_overridden_by_flags() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[simulate]\nscenario = \"II\"\nn = 40\nseed = 3\n").unwrap();
    let a = dir.path().join("a");
    ok(&["--config", path(&cfg), "simulate", "--out", path(&a)]);
    assert_eq!(LongSurvDataset::read_csv(&a, None).unwrap().num_subjects(), 40);
    let b = dir.path().join("b");
    ok(&["--config", path(&cfg), "simulate", "--n", "25", "--out", path(&b)]);
    let data = LongSurvDataset::read_csv(&b, None).unwrap();
    assert_eq!((data.num_subjects(), data.num_markers), (25, 2));

    let json = dir.path().join("run.json");
    fs::write(&json, r#"{"scenario": "II", "n": 12, "seed": 3}"#).unwrap();
    let c = dir.path().join("c");
    ok(&["--config", path(&json), "simulate", "--out", path(&c)]);
    assert_eq!(LongSurvDataset::read_csv(&c, None).unwrap().num_subjects(), 12);

    fs::write(&cfg, "[simulate]\nsead = 3\n").unwrap();
    assert_eq!(mfjm(&["--config", path(&cfg), "simulate", "--out", path(&c)]).status.code(), Some(2));
}

#[test]
fn single_marker_basis_is_the_univariate_one() {
    let dir = tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--scenario", "II", "--n", "150", "--markers", "1", "--seed", "4", "--out", path(&sim)]);
    let basis_path = dir.path().join("basis.json");
    ok(&["mfpca", "--data", path(&sim), "--pve", "1.0", "--out", path(&basis_path)]);
    let basis = read_basis(&basis_path);
    assert_eq!(basis.num_markers(), 1);

    let data = LongSurvDataset::read_csv(&sim, None).unwrap();
    let terms = vec![vec![Term::Intercept, Term::linear(&["t"])]];
    let fit = estimate_mfpc_basis(&data, &terms, &FpcaOptions::default()).unwrap();
    let u = &fit.ufpcas[0];
    for m in 0..basis.num_components() {
        let a = basis.eigenfunctions[0].column(m);
        let b = u.eigenfunctions.column(m);
        assert!((a - b).abs().max().min((a + b).abs().max()) < 1e-10);
        assert!((basis.eigenvalues[m] - u.eigenvalues[m]).abs() < 1e-10);
    }
}

/// Two markers sharing one score; marker 1 has 70 times the variance.
fn imbalanced_dataset(dir: &Path) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let times = equidistant_grid(0.0, 1.0, 11);
    let mut subjects = Vec::new();
    let mut longitudinal = Vec::new();
    for i in 0..200 {
        let shared: f64 = normal.sample(&mut rng);
        let own: f64 = normal.sample(&mut rng);
        let f = |t: f64| (std::f64::consts::PI * t).sin();
        let g = |t: f64| (2.0 * std::f64::consts::PI * t).cos();
        let m1 =
            times.iter().map(|&t| Observation { time: t, value: 70f64.sqrt() * (shared * f(t) + 0.3 * own * g(t)) });
        let m2 = times.iter().map(|&t| Observation { time: t, value: shared * f(t) + 0.3 * own * g(t) });
        subjects.push(Subject { id: format!("{i}"), time: 1.0, event: false, covariates: BTreeMap::new() });
        longitudinal.push(vec![m1.collect(), m2.collect()]);
    }
    LongSurvDataset::new(subjects, longitudinal, 2).unwrap().write_csv(dir).unwrap();
}

fn marker1_share(basis: &MfpcBasis) -> f64 {
    let c = basis.component(0);
    let zero = vec![0.0; c[1].len()];
    let first = basis.inner_product(&[c[0].clone(), zero.clone()], &[c[0].clone(), zero.clone()]);
    first / basis.inner_product(&c, &c)
}

#[test]
fn inverse_variance_weights_balance_the_leading_component() {
    let dir = tempdir().unwrap();
    imbalanced_dataset(dir.path());
    let unit = dir.path().join("unit.json");
    let inv = dir.path().join("inv.json");
    let data = path(dir.path());
    ok(&["mfpca", "--data", data, "--trim", "false", "--out", path(&unit)]);
    ok(&["mfpca", "--data", data, "--trim", "false", "--weights", "inverse-variance", "--out", path(&inv)]);
    let (su, si) = (marker1_share(&read_basis(&unit)), marker1_share(&read_basis(&inv)));
    assert!(su > 0.9, "unit weights share {su}");
    assert!(si < 0.9, "inverse-variance share {si}");
    let out = mfjm(&["mfpca", "--data", data, "--weights", "heavy", "--out", path(&inv)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pve_truncation_follows_the_cumulative_rule() {
    let dir = tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--scenario", "II", "--n", "300", "--seed", "9", "--out", path(&sim)]);
    let basis_path = dir.path().join("basis.json");
    ok(&["mfpca", "--data", path(&sim), "--pve", "0.99", "--out", path(&basis_path)]);
    let data = LongSurvDataset::read_csv(&sim, None).unwrap();
    let full =
        estimate_mfpc_basis(&data, &vec![vec![Term::Intercept, Term::linear(&["t"])]; 2], &FpcaOptions::default())
            .unwrap()
            .basis;
    let positive: Vec<f64> = full.eigenvalues.iter().copied().filter(|v| *v > 1e-12 * full.eigenvalues[0]).collect();
    assert_eq!(read_basis(&basis_path).num_components(), pve_count(&positive, 0.99));
}

#[test]
fn simulate_fit_evaluate_round_trip() {
    let dir = tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--scenario", "II", "--n", "20", "--seed", "5", "--out", path(&sim)]);
    let basis = dir.path().join("basis.json");
    ok(&["mfpca", "--data", path(&sim), "--components", "2", "--trim", "false", "--out", path(&basis)]);
    assert_eq!(read_basis(&basis).num_components(), 2);
    let spec = sim.join("model.toml");
    let fit_args = |out: &Path| {
        vec![
            "fit".to_string(),
            "--data".into(),
            path(&sim).into(),
            "--basis".into(),
            path(&basis).into(),
            "--spec".into(),
            path(&spec).into(),
            "--iterations".into(),
            "600".into(),
            "--burnin".into(),
            "100".into(),
            "--thin".into(),
            "5".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            path(out).into(),
        ]
    };
    let fit1 = dir.path().join("fit1");
    let args: Vec<String> = fit_args(&fit1);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let mut fitted = FittedModel::from_json(&fs::read_to_string(fit1.join("fitted.json")).unwrap()).unwrap();
    // Reading checks the header against the expected columns.
    fitted.read_samples_csv(fs::File::open(fit1.join("samples.csv")).unwrap()).unwrap();
    assert_eq!(fitted.num_draws(), 100);
    assert!(fitted.sample_columns().len() > 10);
    assert!(fit1.join("summary.json").exists());

    let fit2 = dir.path().join("fit2");
    let args: Vec<String> = fit_args(&fit2);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    for f in ["fitted.json", "samples.csv", "summary.json"] {
        assert_eq!(fs::read(fit1.join(f)).unwrap(), fs::read(fit2.join(f)).unwrap(), "{f} differs");
    }

    let eval = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--data",
        path(&sim),
        "--fit",
        path(&fit1),
        "--truth",
        path(&sim.join("truth.json")),
        "--out",
        path(&eval),
    ]);
    let report = EvalReport::from_json(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    for name in ["lambda+gamma", "alpha1", "alpha2", "mu1", "mu2", "sigma1", "sigma2"] {
        assert!(report.predictor(name).is_some(), "{name} missing");
    }
    assert!(fs::read_to_string(eval.join("report.csv")).unwrap().starts_with("predictor,metric,value,replicate"));
}

#[test]
fn malformed_csv_is_a_schema_error() {
    let dir = tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--scenario", "II", "--n", "10", "--seed", "5", "--out", path(&sim)]);
    let long = fs::read_to_string(sim.join("longitudinal.csv")).unwrap();
    let mut lines: Vec<String> = long.lines().map(String::from).collect();
    let mut fields: Vec<&str> = lines[3].split(',').collect();
    fields[1] = "x";
    lines[3] = fields.join(",");
    fs::write(sim.join("longitudinal.csv"), lines.join("\n")).unwrap();
    let out = mfjm(&["fit", "--data", path(&sim), "--out", path(&dir.path().join("fit"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 4") && err.contains("column 'marker'"), "{err}");
    let out = mfjm(&["fit", "--data", path(&dir.path().join("nowhere")), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replicate_study_of_a_scaled_scenario() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("study");
    ok(&[
        "replicate-study",
        "--scenario",
        "I",
        "--n",
        "50",
        "--markers",
        "1,2",
        "--replicates",
        "5",
        "--seed",
        "21",
        "--basis",
        "estimate",
        "--iterations",
        "200",
        "--burnin",
        "100",
        "--thin",
        "2",
        "--out",
        path(&out),
    ]);
    let report = EvalReport::from_json(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.replicates, 5);
    for name in ["lambda+gamma", "alpha1", "alpha2", "mu1", "mu2", "sigma1", "sigma2"] {
        assert!(report.predictor(name).is_some_and(|p| p.rmse.is_finite()), "{name}");
    }
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    for r in 1..=5 {
        assert!(csv.lines().any(|l| l.starts_with("alpha1,bias,") && l.ends_with(&format!(",{r}"))), "replicate {r}");
    }
    assert!(out.join("study.json").exists());
}
