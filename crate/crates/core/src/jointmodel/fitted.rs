//! Fitting driver, fitted-model container and export of posterior draws.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mode::ModeConfig;
use super::model::{BlockKind, JointModel};
use super::sampler::ChainConfig;
use super::spec::{ModelSpec, Predictor};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureConfig;

/// Settings of a complete fit (mode search followed by sampling).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default)]
    pub chain: ChainConfig,
}

/// Description and point estimates of one coefficient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub name: String,
    pub kind: BlockKind,
    pub predictor: Option<Predictor>,
    pub labels: Vec<String>,
    /// Standardisation: original coefficients are `transform · internal`.
    pub transform: Option<Vec<Vec<f64>>>,
    /// Posterior mode in the original parameterisation.
    pub mode: Vec<f64>,
    /// Variance used during the mode search.
    pub mode_tau2: Option<f64>,
    pub acceptance: f64,
}

/// Posterior summary of one scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Posterior summary of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub name: String,
    pub acceptance: f64,
    pub coefficients: Vec<ParameterSummary>,
    pub tau2: Option<ParameterSummary>,
}

/// Posterior mode, draws and diagnostics of a fitted joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub quadrature: QuadratureConfig,
    pub options: FitOptions,
    pub mode_cycles: usize,
    pub mode_converged: bool,
    pub mode_log_posterior: f64,
    pub blocks: Vec<BlockRecord>,
    /// Per block, `draws × dim` in the original parameterisation.
    #[serde(skip)]
    pub samples: Vec<DMatrix<f64>>,
    /// Per block, the variance draws (blocks with a variance parameter).
    #[serde(skip)]
    pub tau2: Vec<Option<Vec<f64>>>,
}

/// Runs the posterior-mode search and then the sampler from the mode.
pub fn fit(model: &JointModel, options: &FitOptions) -> Result<FittedModel> {
    options.chain.validate()?;
    let mode = model.posterior_mode(None, &options.mode)?;
    let chain = model.mcmc_sample(mode.state.clone(), &options.chain)?;
    let blocks = model
        .blocks
        .iter()
        .enumerate()
        .map(|(b, block)| BlockRecord {
            name: block.name.clone(),
            kind: block.kind.clone(),
            predictor: block.predictor,
            labels: block.labels.clone(),
            transform: block.transform.as_ref().map(|t| t.row_iter().map(|r| r.iter().copied().collect()).collect()),
            mode: block.to_original(&mode.state.betas[b]).iter().copied().collect(),
            mode_tau2: block.variance_prior().map(|_| mode.state.tau2[b]),
            acceptance: chain.acceptance[b],
        })
        .collect();
    Ok(FittedModel {
        spec: model.spec.clone(),
        quadrature: model.spec.quadrature,
        options: *options,
        mode_cycles: mode.cycles,
        mode_converged: mode.converged,
        mode_log_posterior: mode.log_posterior,
        blocks,
        samples: chain.samples,
        tau2: chain.tau2,
    })
}

/// Empirical quantile (linear interpolation between order statistics,
/// "type 7") of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, standard deviation and 2.5 %/97.5 % quantiles.
pub fn summarize(label: &str, values: &[f64]) -> ParameterSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ParameterSummary {
        label: label.to_string(),
        mean,
        sd: var.sqrt(),
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
    }
}

fn tau2_label(name: &str) -> String {
    format!("tau2:{name}")
}

impl FittedModel {
    pub fn num_draws(&self) -> usize {
        self.samples.first().map_or(0, |s| s.nrows())
    }

    pub fn block_index(&self, name: &str) -> Result<usize> {
        self.blocks.iter().position(|b| b.name == name).ok_or_else(|| Error::Config(format!("unknown block '{name}'")))
    }

    /// Posterior mean of a block's coefficients.
    pub fn posterior_mean(&self, b: usize) -> DVector<f64> {
        let s = &self.samples[b];
        DVector::from_iterator(s.ncols(), s.column_iter().map(|c| c.mean()))
    }

    /// Per-block posterior summaries.
    pub fn summary(&self) -> Result<Vec<BlockSummary>> {
        if self.num_draws() == 0 {
            return Err(Error::Config("fitted model holds no posterior draws".into()));
        }
        Ok(self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, block)| BlockSummary {
                name: block.name.clone(),
                acceptance: block.acceptance,
                coefficients: block
                    .labels
                    .iter()
                    .enumerate()
                    .map(|(j, l)| summarize(l, self.samples[b].column(j).as_slice()))
                    .collect(),
                tau2: self.tau2[b].as_ref().map(|t| summarize(&tau2_label(&block.name), t)),
            })
            .collect())
    }

    /// Column names of the samples table.
    pub fn sample_columns(&self) -> Vec<String> {
        let mut cols = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            cols.extend(block.labels.iter().cloned());
            if self.tau2.get(b).is_some_and(Option::is_some) {
                cols.push(tau2_label(&block.name));
            }
        }
        cols
    }

    /// Writes one row per retained draw, one column per scalar parameter.
    pub fn write_samples_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.sample_columns())?;
        for d in 0..self.num_draws() {
            let mut row = Vec::new();
            for (b, s) in self.samples.iter().enumerate() {
                row.extend(s.row(d).iter().map(|v| v.to_string()));
                if let Some(t) = &self.tau2[b] {
                    row.push(t[d].to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Restores draws from a samples table written by [`write_samples_csv`].
    ///
    /// [`write_samples_csv`]: FittedModel::write_samples_csv
    pub fn read_samples_csv<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let has_tau: Vec<bool> = self.blocks.iter().map(|b| header.contains(&tau2_label(&b.name))).collect();
        let mut expected = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            expected.extend(block.labels.iter().cloned());
            if has_tau[b] {
                expected.push(tau2_label(&block.name));
            }
        }
        if header != expected {
            return Err(Error::Schema("samples table columns do not match the fitted model".into()));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    v.parse::<f64>().map_err(|_| {
                        Error::Schema(format!("samples row {}, column '{}': invalid number '{v}'", line + 1, header[c]))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let draws = rows.len();
        let mut samples = Vec::new();
        let mut tau2 = Vec::new();
        let mut col = 0;
        for (b, block) in self.blocks.iter().enumerate() {
            let dim = block.labels.len();
            samples.push(DMatrix::from_fn(draws, dim, |d, j| rows[d][col + j]));
            col += dim;
            if has_tau[b] {
                tau2.push(Some(rows.iter().map(|r| r[col]).collect()));
                col += 1;
            } else {
                tau2.push(None);
            }
        }
        self.samples = samples;
        self.tau2 = tau2;
        Ok(())
    }

    /// JSON document of everything except the draws.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// JSON summary (posterior means, 95 % intervals, acceptance rates).
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary()?)?)
    }

    fn check_model(&self, model: &JointModel) -> Result<()> {
        if model.blocks.len() != self.blocks.len()
            || model.blocks.iter().zip(&self.blocks).any(|(a, b)| a.name != b.name || a.dim != b.labels.len())
        {
            return Err(Error::Schema("fitted model does not match the compiled model".into()));
        }
        if self.num_draws() == 0 {
            return Err(Error::Config("fitted model holds no posterior draws".into()));
        }
        Ok(())
    }

    /// Posterior draws (`rows × draws`) of predictor `p` at per-subject times.
    pub fn predictor_draws(&self, model: &JointModel, p: Predictor, times: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        self.check_model(model)?;
        let rows: usize = times.iter().map(Vec::len).sum();
        let mut out = DMatrix::zeros(rows, self.num_draws());
        for (b, x) in model.original_designs(p, times)? {
            out.gemm(1.0, &x, &self.samples[b].transpose(), 1.0);
        }
        if let Predictor::Mu(k) = p {
            let psi = model.psi_at(k, times)?;
            let mut r = 0;
            for (i, ts) in times.iter().enumerate() {
                for _ in ts {
                    for (m, b) in model.score_blocks().enumerate() {
                        let coef = psi[(r, m)];
                        let draws = self.samples[b].column(i);
                        for d in 0..draws.len() {
                            out[(r, d)] += coef * draws[d];
                        }
                    }
                    r += 1;
                }
            }
        }
        Ok(out)
    }
}
