//! Evaluation metrics for fitted joint models: bias, rMSE and coverage of
//! the additive predictors, their risk-set time-resolved versions and
//! errors of estimated MFPC bases.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::MfpcBasis;
use crate::jointmodel::{quantile_sorted, FittedModel, JointModel, Predictor};
use crate::simgen::{PreparedScenario, SimTruth};

/// Predictor evaluated by the metrics; `λ` and `γ` are assessed jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    LambdaGamma,
    Alpha(usize),
    Mu(usize),
    Sigma(usize),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::LambdaGamma => write!(f, "lambda+gamma"),
            Target::Alpha(k) => write!(f, "alpha{}", k + 1),
            Target::Mu(k) => write!(f, "mu{}", k + 1),
            Target::Sigma(k) => write!(f, "sigma{}", k + 1),
        }
    }
}

impl Target {
    pub fn is_survival(&self) -> bool {
        matches!(self, Target::LambdaGamma | Target::Alpha(_))
    }

    /// Bias orientation: longitudinal predictors use estimate − truth,
    /// survival predictors truth − estimate.
    pub fn sign(&self) -> f64 {
        if self.is_survival() {
            -1.0
        } else {
            1.0
        }
    }
}

/// Source of true predictor values.
pub trait TruePredictors {
    /// True value of `target` for subject `i` at time `t`.
    fn value(&self, target: Target, i: usize, t: f64) -> Result<f64>;
}

/// True predictors of a simulated dataset.
pub struct SimulationTruth {
    prepared: PreparedScenario,
    truth: SimTruth,
}

impl SimulationTruth {
    pub fn new(truth: SimTruth) -> Result<Self> {
        Ok(Self { prepared: PreparedScenario::new(truth.scenario.clone())?, truth })
    }

    pub fn truth(&self) -> &SimTruth {
        &self.truth
    }
}

impl TruePredictors for SimulationTruth {
    fn value(&self, target: Target, i: usize, t: f64) -> Result<f64> {
        let s =
            self.truth.subjects.get(i).ok_or_else(|| Error::Schema(format!("no true values for subject index {i}")))?;
        let sc = &self.prepared.scenario;
        Ok(match target {
            Target::LambdaGamma => self.prepared.log_baseline(t) + self.prepared.gamma(s.covariate),
            Target::Alpha(k) => sc.alpha[k],
            Target::Mu(k) => self.prepared.mu(k, t, s)?,
            Target::Sigma(k) => sc.log_sigma[k],
        })
    }
}

/// JSON has no NaN; undefined metrics are written as `null` and read back
/// as NaN.
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nan_vec_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}

/// Bias, rMSE and coverage over a set of evaluation points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(deserialize_with = "nan_from_null")]
    pub bias: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub rmse: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub coverage: f64,
    pub points: usize,
}

/// Metrics on the risk set at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub time: f64,
    pub n_risk: usize,
    #[serde(deserialize_with = "nan_from_null")]
    pub bias: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub rmse: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub coverage: f64,
}

/// Average and time-resolved metrics of one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorMetrics {
    pub predictor: String,
    #[serde(deserialize_with = "nan_from_null")]
    pub bias: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub rmse: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub coverage: f64,
    pub time_resolved: Vec<TimePoint>,
}

/// Metrics of one replicate, or the average over several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub replicates: usize,
    pub predictors: Vec<PredictorMetrics>,
    /// Squared norm errors of the estimated MFPCs (sign resolved).
    #[serde(deserialize_with = "nan_vec_from_null")]
    pub mfpc_errors: Vec<f64>,
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Number of time points for the time-resolved metrics; points are
    /// the midpoints of an equal partition of `[0, max follow-up]`.
    pub time_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { time_points: 20 }
    }
}

/// Bias, rMSE and coverage of posterior draws (`points × draws`) against
/// true values. `sign = 1` gives estimate − truth, `−1` truth − estimate;
/// the estimate is the posterior mean and the interval the 2.5 %/97.5 %
/// type-7 quantiles.
pub fn pointwise_metrics(truth: &[f64], draws: &DMatrix<f64>, sign: f64) -> Result<Metrics> {
    if draws.ncols() == 0 {
        return Err(Error::Config("no posterior draws to evaluate".into()));
    }
    if truth.len() != draws.nrows() {
        return Err(Error::Schema(format!("{} true values for {} evaluation points", truth.len(), draws.nrows())));
    }
    let n = truth.len();
    if n == 0 {
        return Ok(Metrics { bias: f64::NAN, rmse: f64::NAN, coverage: f64::NAN, points: 0 });
    }
    let (mut bias, mut sq, mut covered) = (0.0, 0.0, 0usize);
    let mut row = vec![0.0; draws.ncols()];
    for (r, &t) in truth.iter().enumerate() {
        for (d, v) in row.iter_mut().enumerate() {
            *v = draws[(r, d)];
        }
        let est = row.iter().sum::<f64>() / row.len() as f64;
        row.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile_sorted(&row, 0.025), quantile_sorted(&row, 0.975));
        let err = est - t;
        bias += sign * err;
        sq += err * err;
        covered += (lo <= t && t <= hi) as usize;
    }
    let nf = n as f64;
    Ok(Metrics { bias: bias / nf, rmse: (sq / nf).sqrt(), coverage: covered as f64 / nf, points: n })
}

/// Subjects at risk at time `t` (`T_i ≥ t`).
pub fn risk_set(follow_up: &[f64], t: f64) -> Vec<usize> {
    follow_up.iter().enumerate().filter(|(_, &ti)| ti >= t).map(|(i, _)| i).collect()
}

/// Time-resolved metrics: at each grid time, `values(t, risk set)` returns
/// true values and draws for the subjects at risk.
pub fn time_resolved_metrics<F>(follow_up: &[f64], grid: &[f64], sign: f64, mut values: F) -> Result<Vec<TimePoint>>
where
    F: FnMut(f64, &[usize]) -> Result<(Vec<f64>, DMatrix<f64>)>,
{
    grid.iter()
        .map(|&t| {
            let at_risk = risk_set(follow_up, t);
            if at_risk.is_empty() {
                return Ok(TimePoint { time: t, n_risk: 0, bias: f64::NAN, rmse: f64::NAN, coverage: f64::NAN });
            }
            let (truth, draws) = values(t, &at_risk)?;
            let m = pointwise_metrics(&truth, &draws, sign)?;
            Ok(TimePoint { time: t, n_risk: at_risk.len(), bias: m.bias, rmse: m.rmse, coverage: m.coverage })
        })
        .collect()
}

fn predictor_of(target: Target) -> Vec<Predictor> {
    match target {
        Target::LambdaGamma => vec![Predictor::Lambda, Predictor::Gamma],
        Target::Alpha(k) => vec![Predictor::Alpha(k)],
        Target::Mu(k) => vec![Predictor::Mu(k)],
        Target::Sigma(k) => vec![Predictor::Sigma(k)],
    }
}

fn target_draws(fit: &FittedModel, model: &JointModel, target: Target, times: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let mut out: Option<DMatrix<f64>> = None;
    for p in predictor_of(target) {
        let d = fit.predictor_draws(model, p, times)?;
        out = Some(match out {
            Some(o) => o + d,
            None => d,
        });
    }
    Ok(out.expect("every target has a predictor"))
}

fn target_truth(truth: &dyn TruePredictors, target: Target, times: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, ts) in times.iter().enumerate() {
        for &t in ts {
            out.push(truth.value(target, i, t)?);
        }
    }
    Ok(out)
}

/// Evaluation times of the time-resolved metrics.
pub fn evaluation_grid(max_time: f64, points: usize) -> Vec<f64> {
    (0..points).map(|j| (j as f64 + 0.5) / points as f64 * max_time).collect()
}

fn metrics_for(
    truth: &dyn TruePredictors,
    fit: &FittedModel,
    model: &JointModel,
    target: Target,
    times: &[Vec<f64>],
    options: &EvalOptions,
) -> Result<PredictorMetrics> {
    let draws = target_draws(fit, model, target, times)?;
    let values = target_truth(truth, target, times)?;
    let avg = pointwise_metrics(&values, &draws, target.sign())?;
    let follow_up: Vec<f64> = model.data.subjects.iter().map(|s| s.time).collect();
    let grid = evaluation_grid(model.data.max_time(), options.time_points);
    let n = model.num_subjects;
    let time_resolved = time_resolved_metrics(&follow_up, &grid, target.sign(), |t, at_risk| {
        let mut per_subject = vec![Vec::new(); n];
        for &i in at_risk {
            per_subject[i].push(t);
        }
        Ok((target_truth(truth, target, &per_subject)?, target_draws(fit, model, target, &per_subject)?))
    })?;
    Ok(PredictorMetrics {
        predictor: target.to_string(),
        bias: avg.bias,
        rmse: avg.rmse,
        coverage: avg.coverage,
        time_resolved,
    })
}

/// Metrics of `μ_k` and `σ_k` averaged over the observed `(i, j)` pairs,
/// with bias = estimate − truth.
pub fn longitudinal_bias_rmse_coverage(
    truth: &dyn TruePredictors,
    fit: &FittedModel,
    model: &JointModel,
    options: &EvalOptions,
) -> Result<Vec<PredictorMetrics>> {
    let mut out = Vec::new();
    for k in 0..model.num_markers {
        let times = &model.markers[k].times;
        for target in [Target::Mu(k), Target::Sigma(k)] {
            out.push(metrics_for(truth, fit, model, target, times, options)?);
        }
    }
    Ok(out)
}

/// Metrics of `λ + γ` and `α_k` at the follow-up times, with
/// bias = truth − estimate.
pub fn survival_metrics(
    truth: &dyn TruePredictors,
    fit: &FittedModel,
    model: &JointModel,
    options: &EvalOptions,
) -> Result<Vec<PredictorMetrics>> {
    let times: Vec<Vec<f64>> = model.data.subjects.iter().map(|s| vec![s.time]).collect();
    let mut targets = vec![Target::LambdaGamma];
    targets.extend((0..model.num_markers).map(Target::Alpha));
    targets.into_iter().map(|t| metrics_for(truth, fit, model, t, &times, options)).collect()
}

/// Squared norm errors `min(‖ψ_m − ψ̂_m‖², ‖ψ_m + ψ̂_m‖²)` under the
/// weighted scalar product of the true basis, for the components both bases
/// share.
pub fn mfpc_error(truth: &MfpcBasis, estimate: &MfpcBasis) -> Result<Vec<f64>> {
    if truth.grid.len() != estimate.grid.len()
        || truth.grid.iter().zip(&estimate.grid).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
    {
        return Err(Error::Schema("true and estimated bases are evaluated on different grids".into()));
    }
    if truth.num_markers() != estimate.num_markers() {
        return Err(Error::Schema("true and estimated bases have different marker counts".into()));
    }
    let m = truth.num_components().min(estimate.num_components());
    Ok((0..m)
        .map(|j| {
            let a = truth.component(j);
            let b = estimate.component(j);
            let diff: Vec<Vec<f64>> =
                a.iter().zip(&b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect()).collect();
            let sum: Vec<Vec<f64>> =
                a.iter().zip(&b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect();
            truth.inner_product(&diff, &diff).min(truth.inner_product(&sum, &sum))
        })
        .collect())
}

/// All metrics of one fitted replicate.
pub fn evaluate(
    truth: &dyn TruePredictors,
    fit: &FittedModel,
    model: &JointModel,
    bases: Option<(&MfpcBasis, &MfpcBasis)>,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let mut predictors = survival_metrics(truth, fit, model, options)?;
    predictors.extend(longitudinal_bias_rmse_coverage(truth, fit, model, options)?);
    let mfpc_errors = match bases {
        Some((t, e)) => mfpc_error(t, e)?,
        None => Vec::new(),
    };
    Ok(EvalReport { replicates: 1, predictors, mfpc_errors })
}

fn nan_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

impl EvalReport {
    /// Arithmetic mean of per-replicate metrics (non-finite entries, e.g.
    /// empty risk sets, are skipped).
    pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or_else(|| Error::Config("no reports to aggregate".into()))?;
        let mut predictors = Vec::new();
        for (p, pm) in first.predictors.iter().enumerate() {
            let all: Vec<&PredictorMetrics> = reports
                .iter()
                .map(|r| {
                    r.predictors
                        .get(p)
                        .filter(|q| q.predictor == pm.predictor && q.time_resolved.len() == pm.time_resolved.len())
                        .ok_or_else(|| Error::Schema("reports have different predictor layouts".into()))
                })
                .collect::<Result<_>>()?;
            let time_resolved = (0..pm.time_resolved.len())
                .map(|g| TimePoint {
                    time: pm.time_resolved[g].time,
                    n_risk: (nan_mean(all.iter().map(|q| q.time_resolved[g].n_risk as f64)).round()) as usize,
                    bias: nan_mean(all.iter().map(|q| q.time_resolved[g].bias)),
                    rmse: nan_mean(all.iter().map(|q| q.time_resolved[g].rmse)),
                    coverage: nan_mean(all.iter().map(|q| q.time_resolved[g].coverage)),
                })
                .collect();
            predictors.push(PredictorMetrics {
                predictor: pm.predictor.clone(),
                bias: nan_mean(all.iter().map(|q| q.bias)),
                rmse: nan_mean(all.iter().map(|q| q.rmse)),
                coverage: nan_mean(all.iter().map(|q| q.coverage)),
                time_resolved,
            });
        }
        let m = reports.iter().map(|r| r.mfpc_errors.len()).min().unwrap_or(0);
        let mfpc_errors = (0..m).map(|j| nan_mean(reports.iter().map(|r| r.mfpc_errors[j]))).collect();
        Ok(EvalReport { replicates: reports.iter().map(|r| r.replicates).sum(), predictors, mfpc_errors })
    }

    pub fn predictor(&self, name: &str) -> Option<&PredictorMetrics> {
        self.predictors.iter().find(|p| p.predictor == name)
    }

    /// Mean rMSE of the longitudinal means `μ_k`.
    pub fn longitudinal_rmse(&self) -> f64 {
        nan_mean(self.predictors.iter().filter(|p| p.predictor.starts_with("mu")).map(|p| p.rmse))
    }

    /// Long-format rows `(predictor, metric, value)`; time-resolved metrics
    /// are named `bias(t=…)` etc.
    pub fn rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::new();
        for p in &self.predictors {
            rows.push((p.predictor.clone(), "bias".into(), p.bias));
            rows.push((p.predictor.clone(), "rmse".into(), p.rmse));
            rows.push((p.predictor.clone(), "coverage".into(), p.coverage));
            for tp in &p.time_resolved {
                rows.push((p.predictor.clone(), format!("n_risk(t={})", tp.time), tp.n_risk as f64));
                rows.push((p.predictor.clone(), format!("bias(t={})", tp.time), tp.bias));
                rows.push((p.predictor.clone(), format!("rmse(t={})", tp.time), tp.rmse));
                rows.push((p.predictor.clone(), format!("coverage(t={})", tp.time), tp.coverage));
            }
        }
        for (m, e) in self.mfpc_errors.iter().enumerate() {
            rows.push((format!("psi{}", m + 1), "squared_norm_error".into(), *e));
        }
        rows
    }

    /// Writes reports in long format: `predictor,metric,value,replicate`
    /// (replicates numbered from 1).
    pub fn write_long_csv<W: Write>(reports: &[EvalReport], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["predictor", "metric", "value", "replicate"])?;
        for (r, report) in reports.iter().enumerate() {
            for (p, m, v) in report.rows() {
                w.write_record([p, m, v.to_string(), (r + 1).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
