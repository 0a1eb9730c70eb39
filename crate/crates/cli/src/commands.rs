//! Implementations of the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mfjm_core::evalkit::{evaluate as evaluate_fit, EvalOptions, EvalReport, SimulationTruth};
use mfjm_core::fpca::{estimate_mfpc_basis, FpcaOptions, MfpcBasis, WeightMode};
use mfjm_core::jointmodel::{fit as fit_model, FitOptions, FittedModel, JointModel, ModelSpec, Predictor, Term};
use mfjm_core::simgen::{build_scenario_i, build_scenario_ii, PreparedScenario, SimScenario, SimTruth};
use mfjm_core::study::{mean_terms, replicate_study as run_study, BasisChoice, StudyConfig};
use mfjm_core::{Error, LongSurvDataset, Result};
use serde::Serialize;

use crate::config::read_typed;
use crate::{EvaluateArgs, FitArgs, MfpcaArgs, SimulateArgs, StudyArgs};

fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value.clone().ok_or_else(|| Error::Config(format!("missing required setting --{flag}")))
}

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Scenario by name (`I`, `II`) or from a file, with optional size and
/// marker overrides.
fn load_scenario(name: &str, n: Option<usize>, markers: &Option<Vec<usize>>) -> Result<SimScenario> {
    let mut scenario = match name.to_ascii_uppercase().as_str() {
        "I" | "1" => build_scenario_i(),
        "II" | "2" => build_scenario_ii(),
        _ => read_typed(existing(Path::new(name))?)?,
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("--n must be positive".into()));
        }
        scenario.n = n;
    }
    if let Some(markers) = markers {
        if markers.contains(&0) {
            return Err(Error::Config("markers are numbered from 1".into()));
        }
        let zero_based: Vec<usize> = markers.iter().map(|m| m - 1).collect();
        scenario = scenario.select_markers(&zero_based)?;
    }
    Ok(scenario)
}

#[derive(Serialize)]
struct ScenarioEcho<'a> {
    seed: u64,
    scenario: &'a SimScenario,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let seed = required(&args.seed, "seed")?;
    let out = required(&args.out, "out")?;
    let scenario = load_scenario(args.scenario.as_deref().unwrap_or("I"), args.n, &args.markers)?;
    let (data, truth) = PreparedScenario::new(scenario.clone())?.simulate(seed)?;
    data.write_csv(&out)?;
    write_json(&out.join("scenario.json"), &ScenarioEcho { seed, scenario: &scenario })?;
    write_json(&out.join("truth.json"), &truth)?;
    fs::write(
        out.join("model.toml"),
        toml::to_string(&scenario.model_spec()).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    let events = data.subjects.iter().filter(|s| s.event).count();
    println!(
        "simulated {} subjects, {} markers, {events} events -> {}",
        data.num_subjects(),
        data.num_markers,
        out.display()
    );
    Ok(())
}

fn read_data(dir: &Path, num_markers: Option<usize>) -> Result<LongSurvDataset> {
    LongSurvDataset::read_csv(existing(dir)?, num_markers)
}

fn read_spec(path: &Option<PathBuf>) -> Result<Option<ModelSpec>> {
    path.as_deref()
        .map(|p| {
            let spec: ModelSpec = read_typed(existing(p)?)?;
            spec.validate()?;
            Ok(spec)
        })
        .transpose()
}

fn parse_weights(name: &str) -> Result<WeightMode> {
    match name {
        "unit" => Ok(WeightMode::Unit),
        "inverse-variance" => Ok(WeightMode::InverseIntegratedVariance),
        other => Err(Error::Config(format!("unknown weight mode '{other}' (unit or inverse-variance)"))),
    }
}

fn default_mean_terms(k: usize) -> Vec<Vec<Term>> {
    vec![vec![Term::Intercept, Term::linear(&["t"])]; k]
}

pub fn mfpca(args: &MfpcaArgs) -> Result<()> {
    let data_dir = required(&args.data, "data")?;
    let out = required(&args.out, "out")?;
    let spec = read_spec(&args.spec)?;
    let data = read_data(&data_dir, spec.as_ref().map(|s| s.num_markers))?;
    let terms = spec.as_ref().map_or_else(|| default_mean_terms(data.num_markers), mean_terms);
    let defaults = FpcaOptions::default();
    let options = FpcaOptions {
        grid_points: args.grid_points.unwrap_or(defaults.grid_points),
        marginal_basis_size: args.marginal_basis_size.unwrap_or(defaults.marginal_basis_size),
        univariate_pve: args.univariate_pve.unwrap_or(defaults.univariate_pve),
        trim: if args.trim.unwrap_or(true) { defaults.trim } else { None },
        weights: args.weights.as_deref().map_or(Ok(WeightMode::Unit), parse_weights)?,
        multivariate_pve: if args.components.is_some() { None } else { Some(args.pve.unwrap_or(0.99)) },
        domain: None,
    };
    let mut fit = estimate_mfpc_basis(&data, &terms, &options)?;
    if let Some(m) = args.components {
        fit.basis = fit.basis.truncated(m)?;
    }
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, fit.basis.to_json()?)?;
    println!(
        "{} components from {} of {} subjects; eigenvalues {:?} -> {}",
        fit.basis.num_components(),
        fit.subjects.len(),
        data.num_subjects(),
        fit.basis.eigenvalues[..fit.basis.num_components()].to_vec(),
        out.display()
    );
    Ok(())
}

fn read_basis(path: &Path) -> Result<MfpcBasis> {
    MfpcBasis::from_json(&fs::read_to_string(existing(path)?)?)
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let data_dir = required(&args.data, "data")?;
    let out = required(&args.out, "out")?;
    let spec = read_spec(&args.spec)?;
    let data = read_data(&data_dir, spec.as_ref().map(|s| s.num_markers))?;
    let spec = spec.unwrap_or_else(|| ModelSpec::default_for(data.num_markers));
    if spec.num_markers != data.num_markers {
        return Err(Error::Config(format!(
            "model has {} markers but the data have {}",
            spec.num_markers, data.num_markers
        )));
    }
    let basis = match &args.basis {
        Some(p) => read_basis(p)?,
        None => {
            info!("estimating the MFPC basis from the data");
            let options = FpcaOptions { multivariate_pve: Some(0.99), ..FpcaOptions::default() };
            estimate_mfpc_basis(&data, &mean_terms(&spec), &options)?.basis
        }
    };
    let mut options = FitOptions::default();
    if let Some(v) = args.iterations {
        options.chain.iterations = v;
    }
    if let Some(v) = args.burnin {
        options.chain.burnin = v;
    }
    if let Some(v) = args.thin {
        options.chain.thin = v;
    }
    if let Some(v) = args.seed {
        options.chain.seed = v;
    }
    if let Some(v) = args.max_cycles {
        options.mode.max_cycles = v;
    }
    let model = JointModel::new(spec, data, basis.clone())?;
    let fitted = fit_model(&model, &options)?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("fitted.json"), fitted.to_json()?)?;
    fs::write(out.join("summary.json"), fitted.summary_json()?)?;
    fs::write(out.join("basis.json"), basis.to_json()?)?;
    fitted.write_samples_csv(fs::File::create(out.join("samples.csv"))?)?;
    if !fitted.mode_converged {
        warn!("posterior-mode search stopped after {} cycles without converging", fitted.mode_cycles);
    }
    println!(
        "{} draws of {} blocks ({} mode cycles) -> {}",
        fitted.num_draws(),
        fitted.blocks.len(),
        fitted.mode_cycles,
        out.display()
    );
    Ok(())
}

/// Reads the files written by `fit` and rebuilds the model they refer to.
fn read_fit(dir: &Path, data: LongSurvDataset) -> Result<(FittedModel, JointModel, MfpcBasis)> {
    let dir = existing(dir)?;
    let mut fitted = FittedModel::from_json(&fs::read_to_string(existing(&dir.join("fitted.json"))?)?)?;
    fitted.read_samples_csv(fs::File::open(existing(&dir.join("samples.csv"))?)?)?;
    let basis = read_basis(&dir.join("basis.json"))?;
    let model = JointModel::new(fitted.spec.clone(), data, basis.clone())?;
    Ok((fitted, model, basis))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let data_dir = required(&args.data, "data")?;
    let fit_dir = required(&args.fit, "fit")?;
    let truth_path = required(&args.truth, "truth")?;
    let out = required(&args.out, "out")?;
    let truth: SimTruth = serde_json::from_str(&fs::read_to_string(existing(&truth_path)?)?)?;
    let data = read_data(&data_dir, Some(truth.scenario.num_markers()))?;
    if truth.subjects.len() != data.num_subjects() {
        return Err(Error::Schema(format!(
            "truth has {} subjects but the data have {}",
            truth.subjects.len(),
            data.num_subjects()
        )));
    }
    let (fitted, model, basis) = read_fit(&fit_dir, data)?;
    let true_basis = truth.basis.clone();
    let bases = if true_basis.grid == basis.grid {
        Some((&true_basis, &basis))
    } else {
        warn!("estimated and true bases use different grids; MFPC errors are not reported");
        None
    };
    let options = EvalOptions { time_points: args.time_points.unwrap_or(EvalOptions::default().time_points) };
    let report = evaluate_fit(&SimulationTruth::new(truth)?, &fitted, &model, bases, &options)?;
    fs::create_dir_all(&out)?;
    EvalReport::write_long_csv(std::slice::from_ref(&report), fs::File::create(out.join("report.csv"))?)?;
    fs::write(out.join("report.json"), report.to_json()?)?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("{:<14} {:>10} {:>10} {:>9}", "predictor", "bias", "rmse", "coverage");
    for p in &report.predictors {
        println!("{:<14} {:>10.4} {:>10.4} {:>9.3}", p.predictor, p.bias, p.rmse, p.coverage);
    }
}

pub fn replicate_study(args: &StudyArgs) -> Result<()> {
    let seed = required(&args.seed, "seed")?;
    let out = required(&args.out, "out")?;
    let scenario = load_scenario(args.scenario.as_deref().unwrap_or("II"), args.n, &args.markers)?;
    let basis: BasisChoice = args.basis.as_deref().unwrap_or("true").parse()?;
    let mut fit = FitOptions::default();
    if let Some(v) = args.iterations {
        fit.chain.iterations = v;
    }
    if let Some(v) = args.burnin {
        fit.chain.burnin = v;
    }
    if let Some(v) = args.thin {
        fit.chain.thin = v;
    }
    if let Some(v) = args.max_cycles {
        fit.mode.max_cycles = v;
    }
    fit.chain.validate()?;
    let config = StudyConfig {
        fpca: FpcaOptions { grid_points: scenario.grid_points, ..FpcaOptions::default() },
        scenario,
        replicates: args.replicates.unwrap_or(10),
        seed,
        basis,
        fit,
        eval: EvalOptions { time_points: args.time_points.unwrap_or(EvalOptions::default().time_points) },
    };
    let reports = run_study(&config)?;
    let aggregate = EvalReport::aggregate(&reports)?;
    fs::create_dir_all(&out)?;
    write_json(&out.join("study.json"), &config)?;
    EvalReport::write_long_csv(&reports, fs::File::create(out.join("report.csv"))?)?;
    fs::write(out.join("report.json"), aggregate.to_json()?)?;
    println!("{} replicates, {} basis", reports.len(), String::from(basis));
    print_report(&aggregate);
    let mu: Vec<Predictor> = (0..config.scenario.num_markers()).map(Predictor::Mu).collect();
    info!("longitudinal rMSE over {} means: {:.4}", mu.len(), aggregate.longitudinal_rmse());
    Ok(())
}
