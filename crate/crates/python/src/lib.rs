//! Python bindings: simulate joint longitudinal-survival data, estimate a
//! multivariate functional principal component basis, fit the joint model
//! and evaluate it against the simulation truth.
//!
//! Usage from Python:
//!
//! ```python
//! import mfjm
//! data, truth = mfjm.simulate(seed=1, scenario="II", n=100)
//! basis = mfjm.mfpca(data, pve=0.95)
//! fit = mfjm.fit(data, truth.basis, spec=truth.model_spec(), iterations=1500, burnin=500, thin=2)
//! report = mfjm.evaluate(truth, fit)
//! print(report.metrics())
//! ```

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mfjm_core::evalkit::{evaluate as evaluate_fit, EvalOptions, EvalReport, SimulationTruth};
use mfjm_core::fpca::{estimate_mfpc_basis, FpcaOptions, MfpcBasis, WeightMode};
use mfjm_core::jointmodel::{fit as fit_model, FitOptions, FittedModel, JointModel, ModelSpec, Term};
use mfjm_core::simgen::{build_scenario_i, build_scenario_ii, PreparedScenario, SimScenario, SimTruth};
use mfjm_core::study::{mean_terms, replicate_study as run_study, BasisChoice, StudyConfig};
use mfjm_core::{Error, LongSurvDataset};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Domain(_) | Error::Schema(_) | Error::Parse(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Scenario `"I"`, `"II"` or a JSON scenario document, with optional size
/// and marker (numbered from 1) overrides.
fn load_scenario(name: &str, n: Option<usize>, markers: Option<Vec<usize>>) -> PyResult<SimScenario> {
    let mut scenario = match name.to_ascii_uppercase().as_str() {
        "I" | "1" => build_scenario_i(),
        "II" | "2" => build_scenario_ii(),
        _ => serde_json::from_str(name).map_err(|e| PyValueError::new_err(format!("unknown scenario: {e}")))?,
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(PyValueError::new_err("n must be positive"));
        }
        scenario.n = n;
    }
    if let Some(markers) = markers {
        if markers.contains(&0) {
            return Err(PyValueError::new_err("markers are numbered from 1"));
        }
        let zero_based: Vec<usize> = markers.iter().map(|m| m - 1).collect();
        scenario = scenario.select_markers(&zero_based).map_err(to_py)?;
    }
    Ok(scenario)
}

fn parse_spec(text: &str) -> PyResult<ModelSpec> {
    let spec: ModelSpec = serde_json::from_str(text).map_err(|e| to_py(e.into()))?;
    spec.validate().map_err(to_py)?;
    Ok(spec)
}

fn chain_options(iterations: usize, burnin: usize, thin: usize, seed: u64) -> PyResult<FitOptions> {
    let mut options = FitOptions::default();
    options.chain.iterations = iterations;
    options.chain.burnin = burnin;
    options.chain.thin = thin;
    options.chain.seed = seed;
    options.chain.validate().map_err(to_py)?;
    Ok(options)
}

/// Subjects with survival outcomes and longitudinal observations of
/// several markers.
#[pyclass(frozen)]
struct Dataset {
    inner: LongSurvDataset,
}

#[pymethods]
impl Dataset {
    /// Reads `survival.csv` and `longitudinal.csv` from a directory.
    #[staticmethod]
    #[pyo3(signature = (directory, num_markers=None))]
    fn read_csv(directory: &str, num_markers: Option<usize>) -> PyResult<Self> {
        let inner = LongSurvDataset::read_csv(Path::new(directory), num_markers).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Writes `survival.csv` and `longitudinal.csv` into a directory.
    fn write_csv(&self, directory: &str) -> PyResult<()> {
        self.inner.write_csv(Path::new(directory)).map_err(to_py)
    }

    #[getter]
    fn num_subjects(&self) -> usize {
        self.inner.num_subjects()
    }

    #[getter]
    fn num_markers(&self) -> usize {
        self.inner.num_markers
    }

    #[getter]
    fn num_events(&self) -> usize {
        self.inner.subjects.iter().filter(|s| s.event).count()
    }

    /// Follow-up times of all subjects.
    fn follow_up(&self) -> Vec<f64> {
        self.inner.subjects.iter().map(|s| s.time).collect()
    }

    fn num_observations(&self, marker: usize) -> PyResult<usize> {
        if marker >= self.inner.num_markers {
            return Err(PyValueError::new_err(format!("marker {marker} out of range")));
        }
        Ok(self.inner.num_observations(marker))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(subjects={}, markers={}, events={})",
            self.num_subjects(),
            self.num_markers(),
            self.num_events()
        )
    }
}

/// Multivariate eigenfunctions evaluated on a grid.
#[pyclass(frozen)]
struct Basis {
    inner: MfpcBasis,
}

#[pymethods]
impl Basis {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: MfpcBasis::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid.clone()
    }

    /// Eigenvalues of the components in use.
    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues[..self.inner.num_components()].to_vec()
    }

    #[getter]
    fn num_components(&self) -> usize {
        self.inner.num_components()
    }

    #[getter]
    fn num_markers(&self) -> usize {
        self.inner.num_markers()
    }

    /// Values of all components of one marker at time `t`.
    fn eval(&self, marker: usize, t: f64) -> PyResult<Vec<f64>> {
        if marker >= self.inner.num_markers() {
            return Err(PyValueError::new_err(format!("marker {marker} out of range")));
        }
        self.inner.eval(marker, t).map_err(to_py)
    }

    /// The basis restricted to its first `m` components.
    fn truncated(&self, m: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.truncated(m).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("Basis(markers={}, components={})", self.num_markers(), self.num_components())
    }
}

/// Latent quantities of a simulated dataset.
#[pyclass(frozen)]
struct Truth {
    inner: SimTruth,
}

#[pymethods]
impl Truth {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| to_py(e.into()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| to_py(e.into()))
    }

    /// The true eigenbasis.
    #[getter]
    fn basis(&self) -> Basis {
        Basis { inner: self.inner.basis.clone() }
    }

    /// The joint model matching the data-generating process, as JSON.
    fn model_spec(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.scenario.model_spec()).map_err(|e| to_py(e.into()))
    }

    /// True scores of every subject.
    fn scores(&self) -> Vec<Vec<f64>> {
        self.inner.subjects.iter().map(|s| s.scores.clone()).collect()
    }
}

/// A fitted joint model together with the data and basis it was fitted to.
#[pyclass(frozen)]
struct Fit {
    fitted: FittedModel,
    model: JointModel,
}

#[pymethods]
impl Fit {
    #[getter]
    fn num_draws(&self) -> usize {
        self.fitted.num_draws()
    }

    #[getter]
    fn mode_converged(&self) -> bool {
        self.fitted.mode_converged
    }

    #[getter]
    fn block_names(&self) -> Vec<String> {
        self.fitted.blocks.iter().map(|b| b.name.clone()).collect()
    }

    /// Posterior mean of a coefficient block.
    fn posterior_mean(&self, block: &str) -> PyResult<Vec<f64>> {
        let b = self.fitted.block_index(block).map_err(to_py)?;
        Ok(self.fitted.posterior_mean(b).iter().copied().collect())
    }

    /// Posterior mode of a coefficient block.
    fn mode(&self, block: &str) -> PyResult<Vec<f64>> {
        let b = self.fitted.block_index(block).map_err(to_py)?;
        Ok(self.fitted.blocks[b].mode.clone())
    }

    /// Posterior summaries of all blocks as JSON.
    fn summary_json(&self) -> PyResult<String> {
        self.fitted.summary_json().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Fit(blocks={}, draws={})", self.fitted.blocks.len(), self.num_draws())
    }
}

/// Bias, rMSE and coverage of the fitted predictors.
#[pyclass(frozen)]
struct Report {
    inner: EvalReport,
}

#[pymethods]
impl Report {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: EvalReport::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn replicates(&self) -> usize {
        self.inner.replicates
    }

    /// Squared norm errors of the estimated components.
    #[getter]
    fn mfpc_errors(&self) -> Vec<f64> {
        self.inner.mfpc_errors.clone()
    }

    /// Mean rMSE over the longitudinal predictors.
    fn longitudinal_rmse(&self) -> f64 {
        self.inner.longitudinal_rmse()
    }

    /// `(predictor, bias, rmse, coverage)` per predictor.
    fn metrics(&self) -> Vec<(String, f64, f64, f64)> {
        self.inner.predictors.iter().map(|p| (p.predictor.clone(), p.bias, p.rmse, p.coverage)).collect()
    }
}

/// Simulates a dataset and its latent truth.
#[pyfunction]
#[pyo3(signature = (seed, scenario="I", n=None, markers=None))]
fn simulate(
    py: Python<'_>,
    seed: u64,
    scenario: &str,
    n: Option<usize>,
    markers: Option<Vec<usize>>,
) -> PyResult<(Dataset, Truth)> {
    let scenario = load_scenario(scenario, n, markers)?;
    let (data, truth) = py.detach(|| PreparedScenario::new(scenario)?.simulate(seed)).map_err(to_py)?;
    Ok((Dataset { inner: data }, Truth { inner: truth }))
}

/// Estimates a multivariate eigenbasis. Marker means are modelled with an
/// intercept and a linear time trend unless a model spec (JSON) supplies
/// them. `components` overrides `pve`.
#[pyfunction]
#[pyo3(signature = (data, pve=0.99, components=None, weights="unit", grid_points=None, spec=None))]
fn mfpca(
    py: Python<'_>,
    data: &Dataset,
    pve: f64,
    components: Option<usize>,
    weights: &str,
    grid_points: Option<usize>,
    spec: Option<&str>,
) -> PyResult<Basis> {
    let weights = match weights {
        "unit" => WeightMode::Unit,
        "inverse-variance" => WeightMode::InverseIntegratedVariance,
        other => return Err(PyValueError::new_err(format!("unknown weight mode '{other}'"))),
    };
    let terms = match spec {
        Some(text) => mean_terms(&parse_spec(text)?),
        None => vec![vec![Term::Intercept, Term::linear(&["t"])]; data.inner.num_markers],
    };
    let defaults = FpcaOptions::default();
    let options = FpcaOptions {
        grid_points: grid_points.unwrap_or(defaults.grid_points),
        weights,
        multivariate_pve: if components.is_some() { None } else { Some(pve) },
        ..defaults
    };
    let basis = py.detach(|| -> mfjm_core::Result<MfpcBasis> {
        let basis = estimate_mfpc_basis(&data.inner, &terms, &options)?.basis;
        match components {
            Some(m) => basis.truncated(m),
            None => Ok(basis),
        }
    });
    Ok(Basis { inner: basis.map_err(to_py)? })
}

/// Fits the joint model by posterior-mode search followed by MCMC. Without
/// a model spec (JSON), every predictor is an intercept, the baseline is a
/// P-spline in time and the marker means add the MFPC scores.
#[pyfunction]
#[pyo3(signature = (data, basis, iterations=5000, burnin=1000, thin=5, seed=1, spec=None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: &Dataset,
    basis: &Basis,
    iterations: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
    spec: Option<&str>,
) -> PyResult<Fit> {
    let spec = match spec {
        Some(text) => parse_spec(text)?,
        None => ModelSpec::default_for(data.inner.num_markers),
    };
    let options = chain_options(iterations, burnin, thin, seed)?;
    let model = JointModel::new(spec, data.inner.clone(), basis.inner.clone()).map_err(to_py)?;
    let fitted = py.detach(|| fit_model(&model, &options)).map_err(to_py)?;
    Ok(Fit { fitted, model })
}

/// Compares a fit with the truth of the simulation that produced its data.
#[pyfunction]
#[pyo3(signature = (truth, fit, time_points=20))]
fn evaluate(py: Python<'_>, truth: &Truth, fit: &Fit, time_points: usize) -> PyResult<Report> {
    let true_basis = &truth.inner.basis;
    let bases = (true_basis.grid == fit.model.basis.grid).then_some((true_basis, &fit.model.basis));
    let options = EvalOptions { time_points };
    let report = py.detach(|| -> mfjm_core::Result<EvalReport> {
        let reference = SimulationTruth::new(truth.inner.clone())?;
        evaluate_fit(&reference, &fit.fitted, &fit.model, bases, &options)
    });
    Ok(Report { inner: report.map_err(to_py)? })
}

/// Runs independent simulate-fit-evaluate replicates and returns the
/// per-replicate reports. `basis` is `"true"`, `"estimate"` or
/// `"truncate:<pve>"`.
#[pyfunction]
#[pyo3(signature = (seed, replicates=10, scenario="II", n=None, markers=None, basis="true", iterations=5000, burnin=1000, thin=5, time_points=20))]
#[allow(clippy::too_many_arguments)]
fn replicate_study(
    py: Python<'_>,
    seed: u64,
    replicates: usize,
    scenario: &str,
    n: Option<usize>,
    markers: Option<Vec<usize>>,
    basis: &str,
    iterations: usize,
    burnin: usize,
    thin: usize,
    time_points: usize,
) -> PyResult<Vec<Report>> {
    let scenario = load_scenario(scenario, n, markers)?;
    let basis: BasisChoice = basis.parse().map_err(to_py)?;
    let config = StudyConfig {
        fpca: FpcaOptions { grid_points: scenario.grid_points, ..FpcaOptions::default() },
        scenario,
        replicates,
        seed,
        basis,
        fit: chain_options(iterations, burnin, thin, seed)?,
        eval: EvalOptions { time_points },
    };
    let reports = py.detach(|| run_study(&config)).map_err(to_py)?;
    Ok(reports.into_iter().map(|inner| Report { inner }).collect())
}

/// Averages replicate reports.
#[pyfunction]
fn aggregate(reports: Vec<PyRef<'_, Report>>) -> PyResult<Report> {
    let inner: Vec<EvalReport> = reports.iter().map(|r| r.inner.clone()).collect();
    Ok(Report { inner: EvalReport::aggregate(&inner).map_err(to_py)? })
}

#[pymodule]
fn mfjm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Basis>()?;
    m.add_class::<Truth>()?;
    m.add_class::<Fit>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(mfpca, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(replicate_study, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    Ok(())
}
