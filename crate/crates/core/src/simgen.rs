//! Simulation of joint longitudinal/survival datasets from finite
//! Karhunen–Loève random-effect processes.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{LongSurvDataset, Observation, Subject};
use crate::error::{Error, Result};
use crate::fpca::{basis_from_components, MfpcBasis};
use crate::jointmodel::spec::{ModelSpec, Predictor, Term, TIME};
use crate::linalg::{normalize_signs, sym_eigen_desc};
use crate::quadrature::{equidistant_grid, GaussLegendre};
use crate::splinekit::{eval_bspline_basis, SplineBasisDef};

/// Name of the binary baseline covariate.
pub const COVARIATE: &str = "x";

/// Smallest admissible survival time returned by hazard inversion.
pub const MIN_SURVIVAL_TIME: f64 = 1e-10;

/// Bisection tolerance (in time) of hazard inversion.
pub const ROOT_TOL: f64 = 1e-8;

/// Univariate function used to build a random-effect process on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentFn {
    /// `f(t) = 1`.
    Constant,
    /// `f(t) = t`.
    Linear,
    /// `amplitude · Σ_{i ≥ from} B_i(t)` for a clamped cubic B-spline basis
    /// with `num_basis` functions: a smooth level shift.
    SplineStep { num_basis: usize, from: usize, amplitude: f64 },
    /// `amplitude · B_index(t)`: a localised peak.
    SplineBump { num_basis: usize, index: usize, amplitude: f64 },
}

impl ComponentFn {
    fn spline(num_basis: usize) -> SplineBasisDef {
        SplineBasisDef { degree: 3, num_basis, domain: (0.0, 1.0), penalty_order: 2 }
    }

    /// Values at `points` (inside `[0, 1]`).
    pub fn eval(&self, points: &[f64]) -> Result<Vec<f64>> {
        match self {
            ComponentFn::Constant => Ok(vec![1.0; points.len()]),
            ComponentFn::Linear => Ok(points.to_vec()),
            ComponentFn::SplineStep { num_basis, from, amplitude } => {
                let b = eval_bspline_basis(&Self::spline(*num_basis), points)?;
                Ok(b.row_iter().map(|r| amplitude * r.columns(*from, num_basis - from).sum()).collect())
            }
            ComponentFn::SplineBump { num_basis, index, amplitude } => {
                let b = eval_bspline_basis(&Self::spline(*num_basis), points)?;
                Ok(b.column(*index).iter().map(|v| amplitude * v).collect())
            }
        }
    }

    /// Break points between which the function is polynomial.
    fn breaks(&self) -> Vec<f64> {
        match self {
            ComponentFn::SplineStep { num_basis, .. } | ComponentFn::SplineBump { num_basis, .. } => {
                Self::spline(*num_basis).knots()
            }
            _ => vec![0.0, 1.0],
        }
    }
}

/// Gaussian process `b^(k)(t) = f^(k)(t)ᵀ c^(k)` with stacked coefficients
/// `c ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlProcess {
    /// Per marker, its component functions.
    pub functions: Vec<Vec<ComponentFn>>,
    /// Coefficient covariance, rows of the stacked (marker-major) matrix.
    pub q: Vec<Vec<f64>>,
}

/// Eigen-representation of a [`KlProcess`] under unit weights.
#[derive(Debug, Clone)]
pub struct KlEigen {
    pub eigenvalues: Vec<f64>,
    /// Coefficients (`stacked functions × M*`) of the eigenfunctions.
    pub coefficients: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl KlProcess {
    pub fn num_markers(&self) -> usize {
        self.functions.len()
    }

    fn total(&self) -> usize {
        self.functions.iter().map(Vec::len).sum()
    }

    pub fn q_matrix(&self) -> Result<DMatrix<f64>> {
        let d = self.total();
        if self.q.len() != d || self.q.iter().any(|r| r.len() != d) {
            return Err(Error::Config(format!("coefficient covariance must be {d} × {d}")));
        }
        let q = DMatrix::from_row_iterator(d, d, self.q.iter().flatten().copied());
        if (&q - q.transpose()).abs().max() > 1e-12 {
            return Err(Error::Config("coefficient covariance is not symmetric".into()));
        }
        let (vals, _) = sym_eigen_desc(&q);
        if vals[d - 1] < -1e-10 * vals[0].abs() {
            return Err(Error::Config("coefficient covariance is not positive semidefinite".into()));
        }
        Ok(q)
    }

    /// Exact block-diagonal Gram matrix of the component functions, with
    /// Gauss–Legendre quadrature between the joint polynomial break points.
    pub fn gram(&self) -> Result<DMatrix<f64>> {
        let d = self.total();
        let gl = GaussLegendre::new(10);
        let mut g = DMatrix::zeros(d, d);
        let mut offset = 0;
        for fns in &self.functions {
            let mut breaks: Vec<f64> = fns.iter().flat_map(ComponentFn::breaks).collect();
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for w in breaks.windows(2) {
                let (a, b) = (w[0], w[1]);
                for (x, wt) in gl.nodes.iter().zip(&gl.weights) {
                    nodes.push(a + (b - a) * (x + 1.0) / 2.0);
                    weights.push((b - a) * wt / 2.0);
                }
            }
            let values = fns.iter().map(|f| f.eval(&nodes)).collect::<Result<Vec<_>>>()?;
            for a in 0..fns.len() {
                for b in 0..fns.len() {
                    g[(offset + a, offset + b)] =
                        (0..nodes.len()).map(|j| weights[j] * values[a][j] * values[b][j]).sum();
                }
            }
            offset += fns.len();
        }
        Ok(g)
    }

    /// Eigenvalues and eigenfunction coefficients of the covariance
    /// operator: `G^{1/2} Q G^{1/2} v = ν v`, `a = G^{-1/2} v`.
    pub fn eigen(&self) -> Result<KlEigen> {
        let q = self.q_matrix()?;
        let g = self.gram()?;
        let (gv, gvec) = sym_eigen_desc(&g);
        if gv.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("component functions are linearly dependent".into()));
        }
        let sqrt_g = &gvec * DMatrix::from_diagonal(&gv.map(f64::sqrt)) * gvec.transpose();
        let inv_sqrt_g = &gvec * DMatrix::from_diagonal(&gv.map(|v| 1.0 / v.sqrt())) * gvec.transpose();
        let a = &sqrt_g * q * &sqrt_g;
        let (vals, mut vecs) = sym_eigen_desc(&((&a + a.transpose()) * 0.5));
        normalize_signs(&mut vecs);
        let mut offsets = Vec::new();
        let mut o = 0;
        for f in &self.functions {
            offsets.push(o);
            o += f.len();
        }
        Ok(KlEigen { eigenvalues: vals.iter().map(|v| v.max(0.0)).collect(), coefficients: inv_sqrt_g * vecs, offsets })
    }

    /// The process restricted to the given markers (in the given order).
    pub fn select(&self, markers: &[usize]) -> Result<Self> {
        let mut offsets = Vec::new();
        let mut o = 0;
        for f in &self.functions {
            offsets.push(o);
            o += f.len();
        }
        let mut idx = Vec::new();
        let mut functions = Vec::new();
        for &k in markers {
            let fns = self.functions.get(k).ok_or_else(|| Error::Config(format!("marker {} does not exist", k + 1)))?;
            idx.extend(offsets[k]..offsets[k] + fns.len());
            functions.push(fns.clone());
        }
        let q = idx.iter().map(|&a| idx.iter().map(|&b| self.q[a][b]).collect()).collect();
        Ok(Self { functions, q })
    }

    /// Component function values of marker `k` at `points` (`points × J_k`).
    pub fn function_values(&self, k: usize, points: &[f64]) -> Result<DMatrix<f64>> {
        let fns = &self.functions[k];
        let cols = fns.iter().map(|f| f.eval(points)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(points.len(), fns.len(), |r, c| cols[c][r]))
    }

    /// True multivariate basis evaluated on `grid` (unit weights).
    pub fn true_basis(&self, grid: &[f64]) -> Result<MfpcBasis> {
        let functions = (0..self.num_markers()).map(|k| self.function_values(k, grid)).collect::<Result<Vec<_>>>()?;
        basis_from_components(grid, &functions, &self.gram()?, &self.q_matrix()?, &vec![1.0; self.num_markers()])
    }
}

impl KlEigen {
    /// `ψ_1^(k)(t), …, ψ_M*^(k)(t)` evaluated exactly.
    pub fn eval(&self, process: &KlProcess, k: usize, t: f64) -> Result<Vec<f64>> {
        let f = process.function_values(k, &[t])?;
        let block = self.coefficients.rows(self.offsets[k], f.ncols());
        Ok((f * block).row(0).iter().copied().collect())
    }
}

/// Fixed effects `β0 + βt t + βx x + βtx t x` of a longitudinal mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCoefficients {
    pub intercept: f64,
    pub time: f64,
    pub covariate: f64,
    pub interaction: f64,
}

impl MeanCoefficients {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        self.intercept + self.time * t + self.covariate * x + self.interaction * t * x
    }
}

/// Complete data-generating configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub name: String,
    pub n: usize,
    /// Number of equidistant observation grid points on `[0, admin_cap]`.
    pub grid_points: usize,
    /// Log-baseline `η_λ(t) = scale · t^power`.
    pub baseline_scale: f64,
    pub baseline_power: f64,
    /// `η_γ = gamma_intercept + gamma_covariate · x`.
    pub gamma_intercept: f64,
    pub gamma_covariate: f64,
    pub alpha: Vec<f64>,
    pub mean: Vec<MeanCoefficients>,
    pub process: KlProcess,
    /// `η_σk` (log standard deviations).
    pub log_sigma: Vec<f64>,
    /// Censoring times are uniform on `[0, censoring_upper]`.
    pub censoring_upper: f64,
    pub admin_cap: f64,
    /// Fraction of eligible grid points sampled per marker.
    pub retention: f64,
    /// Maximum number of observations per marker, including time zero.
    pub max_per_marker: usize,
    /// Success probability of the binary covariate.
    pub covariate_p: f64,
}

impl SimScenario {
    pub fn num_markers(&self) -> usize {
        self.process.num_markers()
    }

    /// The scenario reduced to a subset of its markers (zero-based).
    pub fn select_markers(&self, markers: &[usize]) -> Result<Self> {
        if markers.is_empty() {
            return Err(Error::Config("at least one marker must be selected".into()));
        }
        let process = self.process.select(markers)?;
        let mut out = self.clone();
        out.alpha = markers.iter().map(|&k| self.alpha[k]).collect();
        out.mean = markers.iter().map(|&k| self.mean[k]).collect();
        out.log_sigma = markers.iter().map(|&k| self.log_sigma[k]).collect();
        out.process = process;
        Ok(out)
    }

    /// Joint model with the structure of the data-generating process: smooth
    /// baseline, `γ = 1 + x`, constant associations, means
    /// `1 + t + x + t·x + MFPC` and constant log noise.
    pub fn model_spec(&self) -> ModelSpec {
        let k = self.num_markers();
        let mut spec =
            ModelSpec::default_for(k).with_terms(Predictor::Gamma, vec![Term::Intercept, Term::linear(&[COVARIATE])]);
        for kk in 0..k {
            spec = spec.with_terms(
                Predictor::Mu(kk),
                vec![
                    Term::Intercept,
                    Term::linear(&[TIME]),
                    Term::linear(&[COVARIATE]),
                    Term::linear(&[TIME, COVARIATE]),
                    Term::Mfpc,
                ],
            );
        }
        spec
    }
}

/// Scenario I: six markers with correlated random intercepts and slopes.
pub fn build_scenario_i() -> SimScenario {
    let s1 = [
        [0.080, -0.070, 0.030, 0.030, 0.022, 0.022],
        [-0.070, 0.900, 0.030, 0.030, 0.022, 0.022],
        [0.030, 0.030, 0.096, -0.084, 0.030, 0.030],
        [0.030, 0.030, -0.084, 1.080, 0.030, 0.030],
        [0.022, 0.022, 0.030, 0.030, 0.112, -0.098],
        [0.022, 0.022, 0.030, 0.030, -0.098, 1.260],
    ];
    let s2 = [
        [0.015, 0.015, 0.022, 0.022, 0.030, 0.030],
        [0.015, 0.015, 0.022, 0.022, 0.030, 0.030],
        [0.000, 0.000, 0.015, 0.015, 0.022, 0.022],
        [0.000, 0.000, 0.015, 0.015, 0.022, 0.022],
        [0.000, 0.000, 0.000, 0.000, 0.015, 0.015],
        [0.000, 0.000, 0.000, 0.000, 0.015, 0.015],
    ];
    let s3 = [
        [0.128, -0.112, 0.030, 0.030, 0.022, 0.022],
        [-0.112, 1.440, 0.030, 0.030, 0.022, 0.022],
        [0.030, 0.030, 0.144, -0.126, 0.030, 0.030],
        [0.030, 0.030, -0.126, 1.620, 0.030, 0.030],
        [0.022, 0.022, 0.030, 0.030, 0.160, -0.140],
        [0.022, 0.022, 0.030, 0.030, -0.140, 1.800],
    ];
    let mut q = vec![vec![0.0; 12]; 12];
    for r in 0..6 {
        for c in 0..6 {
            q[r][c] = s1[r][c];
            q[r + 6][c] = s2[r][c];
            q[r][c + 6] = s2[c][r];
            q[r + 6][c + 6] = s3[r][c];
        }
    }
    SimScenario {
        name: "I".into(),
        n: 150,
        grid_points: 101,
        baseline_scale: 1.37,
        baseline_power: 0.37,
        gamma_intercept: -1.5,
        gamma_covariate: 0.48,
        alpha: vec![1.5, 0.6, 0.3, -0.3, -0.6, -1.5],
        mean: vec![MeanCoefficients { intercept: 0.0, time: 0.2, covariate: -0.25, interaction: -0.05 }; 6],
        process: KlProcess { functions: vec![vec![ComponentFn::Constant, ComponentFn::Linear]; 6], q },
        log_sigma: vec![0.06f64.ln(); 6],
        censoring_upper: 1.75,
        admin_cap: 1.0,
        retention: 0.25,
        max_per_marker: 15,
        covariate_p: 0.5,
    }
}

/// Scenario II: two markers with a six-component functional random effect.
///
/// Marker 1 carries smooth level shifts at the start, middle and end of the
/// interval, marker 2 short-term peaks there; amplitudes are chosen so that
/// the covariance operator has the scenario eigenvalues.
pub fn build_scenario_ii() -> SimScenario {
    let q = vec![
        vec![3.124, -0.396, 0.892, 0.119, -0.668, 0.005],
        vec![-0.396, 1.657, 0.162, -0.265, -0.495, -0.778],
        vec![0.892, 0.162, 1.980, -0.015, -0.906, 0.491],
        vec![0.119, -0.265, -0.015, 1.081, 0.063, 0.728],
        vec![-0.668, -0.495, -0.906, 0.063, 0.890, 0.243],
        vec![0.005, -0.778, 0.491, 0.728, 0.243, 1.969],
    ];
    let functions = vec![
        vec![
            ComponentFn::SplineStep { num_basis: 9, from: 1, amplitude: 0.6339324995175436 },
            ComponentFn::SplineStep { num_basis: 9, from: 4, amplitude: 0.5161749714683783 },
            ComponentFn::SplineStep { num_basis: 9, from: 8, amplitude: 1.353119508003209 },
        ],
        vec![
            ComponentFn::SplineBump { num_basis: 7, index: 1, amplitude: 1.5856536289109648 },
            ComponentFn::SplineBump { num_basis: 7, index: 3, amplitude: 1.2159017259927836 },
            ComponentFn::SplineBump { num_basis: 7, index: 5, amplitude: 2.084221414976839 },
        ],
    ];
    SimScenario {
        name: "II".into(),
        n: 300,
        grid_points: 101,
        baseline_scale: 1.65,
        baseline_power: 0.65,
        gamma_intercept: -3.0,
        gamma_covariate: 0.3,
        alpha: vec![1.1, 1.1],
        mean: vec![MeanCoefficients { intercept: 0.0, time: 1.0, covariate: 0.3, interaction: 0.3 }; 2],
        process: KlProcess { functions, q },
        log_sigma: vec![0.06f64.ln(); 2],
        censoring_upper: 3.0,
        admin_cap: 1.0,
        retention: 0.25,
        max_per_marker: 15,
        covariate_p: 0.5,
    }
}

fn infinity_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Per-subject latent quantities of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub covariate: f64,
    /// Scores `ρ_i` in the true eigenbasis.
    pub scores: Vec<f64>,
    /// Uncensored event time (infinite beyond the administrative cap;
    /// stored as `null` in JSON).
    #[serde(deserialize_with = "infinity_from_null")]
    pub event_time: f64,
    pub censoring_time: f64,
}

/// Everything needed to evaluate the true predictors of a simulated
/// dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub scenario: SimScenario,
    pub seed: u64,
    pub subjects: Vec<SubjectTruth>,
    pub basis: MfpcBasis,
}

/// A scenario with its eigen-representation precomputed.
pub struct PreparedScenario {
    pub scenario: SimScenario,
    pub eigen: KlEigen,
    pub grid: Vec<f64>,
}

impl PreparedScenario {
    pub fn new(scenario: SimScenario) -> Result<Self> {
        let k = scenario.process.num_markers();
        if scenario.alpha.len() != k || scenario.mean.len() != k || scenario.log_sigma.len() != k {
            return Err(Error::Config(format!(
                "scenario '{}': alpha, mean and log_sigma need one entry per marker ({k})",
                scenario.name
            )));
        }
        if !(scenario.retention > 0.0 && scenario.retention <= 1.0) {
            return Err(Error::Config("retention fraction must lie in (0, 1]".into()));
        }
        if scenario.max_per_marker == 0 || scenario.n == 0 || scenario.grid_points < 2 {
            return Err(Error::Config("n, grid_points and max_per_marker must be positive".into()));
        }
        if !(scenario.admin_cap > 0.0 && scenario.admin_cap <= 1.0) {
            return Err(Error::Config("administrative cap must lie in (0, 1]".into()));
        }
        let eigen = scenario.process.eigen()?;
        let grid = equidistant_grid(0.0, scenario.admin_cap, scenario.grid_points);
        Ok(Self { scenario, eigen, grid })
    }

    /// True random effect `b^(k)(t) = Σ_m ρ_m ψ_m^(k)(t)`.
    pub fn random_effect(&self, k: usize, t: f64, scores: &[f64]) -> Result<f64> {
        let psi = self.eigen.eval(&self.scenario.process, k, t)?;
        Ok(psi.iter().zip(scores).map(|(a, b)| a * b).sum())
    }

    /// True `η_μk(t)` of a subject.
    pub fn mu(&self, k: usize, t: f64, truth: &SubjectTruth) -> Result<f64> {
        Ok(self.scenario.mean[k].eval(t, truth.covariate) + self.random_effect(k, t, &truth.scores)?)
    }

    /// True log-baseline `η_λ(t)`.
    pub fn log_baseline(&self, t: f64) -> f64 {
        self.scenario.baseline_scale * t.powf(self.scenario.baseline_power)
    }

    /// True `η_γ`.
    pub fn gamma(&self, x: f64) -> f64 {
        self.scenario.gamma_intercept + self.scenario.gamma_covariate * x
    }

    /// True log-hazard `η_λ(t) + η_γ + Σ_k α_k η_μk(t)`.
    pub fn log_hazard(&self, t: f64, truth: &SubjectTruth) -> Result<f64> {
        let mut eta = self.log_baseline(t) + self.gamma(truth.covariate);
        for (k, a) in self.scenario.alpha.iter().enumerate() {
            eta += a * self.mu(k, t, truth)?;
        }
        Ok(eta)
    }

    /// Draws `ρ_i ~ N(0, diag(ν))`.
    pub fn draw_scores<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.eigen
            .eigenvalues
            .iter()
            .map(|&nu| if nu > 0.0 { Normal::new(0.0, nu.sqrt()).unwrap().sample(rng) } else { 0.0 })
            .collect()
    }

    /// Simulates one dataset.
    pub fn simulate(&self, seed: u64) -> Result<(LongSurvDataset, SimTruth)> {
        let sc = &self.scenario;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = sc.process.num_markers();
        let mut subjects = Vec::with_capacity(sc.n);
        let mut longitudinal = Vec::with_capacity(sc.n);
        let mut truths = Vec::with_capacity(sc.n);
        for i in 0..sc.n {
            let covariate = if rng.random::<f64>() < sc.covariate_p { 1.0 } else { 0.0 };
            let scores = self.draw_scores(&mut rng);
            let mut truth = SubjectTruth { covariate, scores, event_time: f64::INFINITY, censoring_time: 0.0 };
            let eta = |t: f64| self.log_hazard(t, &truth);
            truth.event_time = draw_survival_time(&eta, sc.admin_cap, &mut rng)?;
            truth.censoring_time = rng.random::<f64>() * sc.censoring_upper;
            let (time, event) = censor(truth.event_time, truth.censoring_time, sc.admin_cap);
            let obs = self.sample_observations(&truth, time, &mut rng)?;
            subjects.push(Subject {
                id: (i + 1).to_string(),
                time,
                event,
                covariates: BTreeMap::from([(COVARIATE.to_string(), covariate)]),
            });
            longitudinal.push(obs);
            truths.push(truth);
        }
        let data = LongSurvDataset::new(subjects, longitudinal, k)?;
        let truth =
            SimTruth { scenario: sc.clone(), seed, subjects: truths, basis: sc.process.true_basis(&self.grid)? };
        Ok((data, truth))
    }

    /// Observation times and noisy values of one subject: time zero plus a
    /// random subset of the grid points in `(0, T_i]`.
    pub fn sample_observations<R: Rng>(
        &self,
        truth: &SubjectTruth,
        follow_up: f64,
        rng: &mut R,
    ) -> Result<Vec<Vec<Observation>>> {
        let sc = &self.scenario;
        let eligible: Vec<f64> =
            self.grid.iter().copied().filter(|&g| g > 0.0 && g <= follow_up * (1.0 + 1e-12)).collect();
        let extra = ((sc.retention * eligible.len() as f64).round() as usize).min(sc.max_per_marker - 1);
        let mut out = Vec::with_capacity(sc.process.num_markers());
        for k in 0..sc.process.num_markers() {
            let mut times = vec![0.0];
            let mut picked: Vec<usize> = sample(rng, eligible.len(), extra).into_vec();
            picked.sort_unstable();
            times.extend(picked.into_iter().map(|j| eligible[j].min(follow_up)));
            let noise = Normal::new(0.0, sc.log_sigma[k].exp()).unwrap();
            let obs = times
                .into_iter()
                .map(|t| Ok(Observation { time: t, value: self.mu(k, t, truth)? + noise.sample(rng) }))
                .collect::<Result<Vec<_>>>()?;
            out.push(obs);
        }
        Ok(out)
    }
}

/// Observed follow-up and event indicator from latent event, censoring and
/// administrative times.
pub fn censor(event_time: f64, censoring_time: f64, admin_cap: f64) -> (f64, bool) {
    let limit = censoring_time.min(admin_cap);
    if event_time <= limit {
        (event_time, true)
    } else {
        (limit.max(MIN_SURVIVAL_TIME), false)
    }
}

/// Draws a survival time by inverting `Λ(t) = −log U` with bisection.
///
/// Returns `f64::INFINITY` when `Λ(t_max) < −log U`.
pub fn draw_survival_time<R: Rng, F: Fn(f64) -> Result<f64>>(log_hazard: &F, t_max: f64, rng: &mut R) -> Result<f64> {
    let u: f64 = rng.random();
    invert_cumulative_hazard(log_hazard, t_max, -(1.0 - u).ln())
}

/// Solves `Λ(t) = target` on `[MIN_SURVIVAL_TIME, t_max]`.
pub fn invert_cumulative_hazard<F: Fn(f64) -> Result<f64>>(log_hazard: &F, t_max: f64, target: f64) -> Result<f64> {
    const PANELS: usize = 64;
    let gl = GaussLegendre::new(7);
    let h = t_max / PANELS as f64;
    let panel_integral = |a: f64, b: f64| -> Result<f64> {
        let mut s = 0.0;
        for (x, w) in gl.nodes.iter().zip(&gl.weights) {
            let t = a + (b - a) * (x + 1.0) / 2.0;
            s += w * (b - a) / 2.0 * log_hazard(t)?.exp();
        }
        Ok(s)
    };
    let mut cum = vec![0.0; PANELS + 1];
    for j in 0..PANELS {
        let v = panel_integral(j as f64 * h, (j + 1) as f64 * h)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Simulation(format!("non-finite hazard integral on panel {j}")));
        }
        cum[j + 1] = cum[j] + v;
    }
    if target <= 0.0 {
        return Ok(MIN_SURVIVAL_TIME);
    }
    if cum[PANELS] < target {
        return Ok(f64::INFINITY);
    }
    let lambda = |t: f64| -> Result<f64> {
        let j = ((t / h).floor() as usize).min(PANELS - 1);
        Ok(cum[j] + panel_integral(j as f64 * h, t)?)
    };
    let (mut lo, mut hi) = (MIN_SURVIVAL_TIME, t_max);
    let mut f_lo = lambda(lo)?;
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        let f_mid = lambda(mid)?;
        if f_mid < f_lo - 1e-12 {
            return Err(Error::Simulation("cumulative hazard is not monotone".into()));
        }
        if f_mid < target {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draws `n` score vectors `ρ_i ~ N(0, diag(ν))` and evaluates the random
/// effects `b_i^(k)` on the scenario grid.
pub fn draw_kl_random_effects(
    prepared: &PreparedScenario,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = prepared.eigen.eigenvalues.len();
    let mut scores = DMatrix::zeros(n, m);
    for i in 0..n {
        let s = prepared.draw_scores(&mut rng);
        scores.row_mut(i).copy_from(&DVector::from_vec(s).transpose());
    }
    let basis = prepared.scenario.process.true_basis(&prepared.grid)?;
    let trajectories = basis.eigenfunctions.iter().map(|ef| &scores * ef.transpose()).collect();
    Ok((scores, trajectories))
}

/// Summary statistics of a simulated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub event_rate: f64,
    pub mean_follow_up: f64,
    pub mean_observations: f64,
    pub min_observations: usize,
    pub max_observations: usize,
}

pub fn dataset_stats(data: &LongSurvDataset) -> DatasetStats {
    let n = data.num_subjects() as f64;
    let counts: Vec<usize> = data.longitudinal.iter().map(|o| o.iter().map(Vec::len).sum()).collect();
    DatasetStats {
        event_rate: data.subjects.iter().filter(|s| s.event).count() as f64 / n,
        mean_follow_up: data.subjects.iter().map(|s| s.time).sum::<f64>() / n,
        mean_observations: counts.iter().sum::<usize>() as f64 / n,
        min_observations: counts.iter().copied().min().unwrap_or(0),
        max_observations: counts.iter().copied().max().unwrap_or(0),
    }
}
