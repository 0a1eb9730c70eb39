//! Simulation studies: simulate, estimate a basis, fit and evaluate
//! independent replicates.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalOptions, EvalReport, SimulationTruth};
use crate::fpca::{estimate_mfpc_basis, truncate_basis, FpcaOptions, MfpcBasis};
use crate::jointmodel::{fit, FitOptions, JointModel, ModelSpec, Predictor, Term};
use crate::simgen::{PreparedScenario, SimScenario, SimTruth};
use crate::LongSurvDataset;

/// Which MFPC basis the joint model uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BasisChoice {
    /// The data-generating eigenfunctions.
    True,
    /// Estimated eigenfunctions, as many as the true basis has.
    Estimate,
    /// Estimated eigenfunctions truncated by proportion of variance explained.
    Truncate(f64),
}

impl FromStr for BasisChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(BasisChoice::True),
            "estimate" => Ok(BasisChoice::Estimate),
            _ => {
                let pve = s
                    .strip_prefix("truncate:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("basis '{s}' is not true, estimate or truncate:<pve>")))?;
                if !(pve > 0.0 && pve <= 1.0) {
                    return Err(Error::Config(format!("pve {pve} outside (0, 1]")));
                }
                Ok(BasisChoice::Truncate(pve))
            }
        }
    }
}

impl TryFrom<String> for BasisChoice {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BasisChoice> for String {
    fn from(b: BasisChoice) -> String {
        match b {
            BasisChoice::True => "true".into(),
            BasisChoice::Estimate => "estimate".into(),
            BasisChoice::Truncate(p) => format!("truncate:{p}"),
        }
    }
}

/// Configuration of a replicate study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: SimScenario,
    pub replicates: usize,
    /// Replicate `r` uses data seed `seed + r` (and the same chain seed).
    pub seed: u64,
    pub basis: BasisChoice,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub fpca: FpcaOptions,
    #[serde(default)]
    pub eval: EvalOptions,
}

/// Parametric part of each longitudinal mean, used for the mean fits of
/// the basis estimation.
pub fn mean_terms(spec: &ModelSpec) -> Vec<Vec<Term>> {
    (0..spec.num_markers)
        .map(|k| spec.terms(Predictor::Mu(k)).iter().filter(|t| !matches!(t, Term::Mfpc)).cloned().collect())
        .collect()
}

/// Basis for one simulated dataset: the truth, or an estimate on the
/// true basis grid.
pub fn choose_basis(
    choice: BasisChoice,
    data: &LongSurvDataset,
    truth: &SimTruth,
    spec: &ModelSpec,
    fpca: &FpcaOptions,
) -> Result<MfpcBasis> {
    let grid = &truth.basis.grid;
    let options = FpcaOptions {
        grid_points: grid.len(),
        domain: Some([grid[0], grid[grid.len() - 1]]),
        multivariate_pve: None,
        ..fpca.clone()
    };
    match choice {
        BasisChoice::True => Ok(truth.basis.clone()),
        BasisChoice::Estimate => {
            let est = estimate_mfpc_basis(data, &mean_terms(spec), &options)?.basis;
            let m = truth.basis.num_components().min(est.eigenvalues.len());
            est.with_truncation(m)
        }
        BasisChoice::Truncate(pve) => {
            truncate_basis(&estimate_mfpc_basis(data, &mean_terms(spec), &options)?.basis, pve)
        }
    }
}

/// Simulates, fits and evaluates replicate `r`.
pub fn run_replicate(config: &StudyConfig, r: usize) -> Result<EvalReport> {
    let prepared = PreparedScenario::new(config.scenario.clone())?;
    let seed = config.seed + r as u64;
    let (data, truth) = prepared.simulate(seed)?;
    let spec = config.scenario.model_spec();
    let basis = choose_basis(config.basis, &data, &truth, &spec, &config.fpca)?;
    let model = JointModel::new(spec, data, basis.clone())?;
    let mut options = config.fit;
    options.chain.seed = seed;
    let fitted = fit(&model, &options)?;
    let true_basis = truth.basis.clone();
    let truth = SimulationTruth::new(truth)?;
    evaluate(&truth, &fitted, &model, Some((&true_basis, &basis)), &config.eval)
}

/// Runs all replicates in parallel; results are in replicate order.
pub fn replicate_study(config: &StudyConfig) -> Result<Vec<EvalReport>> {
    if config.replicates == 0 {
        return Err(Error::Config("a study needs at least one replicate".into()));
    }
    (0..config.replicates).into_par_iter().map(|r| run_replicate(config, r)).collect()
}
