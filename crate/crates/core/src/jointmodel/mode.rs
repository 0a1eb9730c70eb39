//! Posterior-mode search by blockwise Newton–Raphson and starting values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{Block, BlockKind, JointModel, State};
use super::spec::{Predictor, Term, VariancePrior};
use crate::error::{Error, Result};
use crate::linalg::cholesky_with_ridge;

/// Controls of the posterior-mode search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    pub max_cycles: usize,
    /// Convergence when the relative change of the log-posterior over a
    /// full cycle falls below this value.
    pub tolerance: f64,
    /// Step length for λ and γ blocks (others use 1).
    pub survival_step: f64,
    pub max_halvings: usize,
    /// Consecutive cycles with decreasing log-posterior before giving up.
    pub max_decreases: usize,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self { max_cycles: 200, tolerance: 1e-6, survival_step: 0.1, max_halvings: 10, max_decreases: 10 }
    }
}

/// Result of the posterior-mode search.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub state: State,
    pub cycles: usize,
    pub converged: bool,
    pub log_posterior: f64,
}

impl JointModel {
    /// Primary-location design of a coefficient block.
    fn primary_design<'a>(&self, block: &'a Block) -> &'a DMatrix<f64> {
        match block.predictor.map(|p| p.marker().is_some() && !matches!(p, Predictor::Alpha(_))) {
            Some(true) => block.x_obs.as_ref().unwrap(),
            _ => block.x_surv.as_ref().unwrap(),
        }
    }

    /// Starting values: zero coefficients except data-driven intercepts,
    /// score variances at the basis eigenvalues and smooth variances chosen
    /// to give a moderate effective dimension.
    pub fn initial_state(&self) -> Result<State> {
        let mut betas = Vec::with_capacity(self.blocks.len());
        let mut tau2 = Vec::with_capacity(self.blocks.len());
        let events: f64 = self.delta.sum();
        let exposure: f64 = self.data.subjects.iter().map(|s| s.time).sum();
        for block in &self.blocks {
            let mut beta = DVector::zeros(block.dim);
            match &block.kind {
                BlockKind::Parametric => {
                    let p = block.predictor.unwrap();
                    if let Some(slot) = block.slots.iter().find(|s| s.term == Term::Intercept) {
                        let value = match p {
                            Predictor::Mu(k) => self.markers[k].y.mean(),
                            Predictor::Sigma(k) => {
                                let y = &self.markers[k].y;
                                let m = y.mean();
                                let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len().max(1) as f64;
                                0.5 * var.max(1e-8).ln()
                            }
                            Predictor::Gamma => (events.max(0.5) / exposure).ln(),
                            _ => 0.0,
                        };
                        beta[slot.start] = value;
                    }
                    tau2.push(1.0);
                }
                BlockKind::Smooth { prior, .. } => {
                    tau2.push(match prior {
                        VariancePrior::Fixed { value } => *value,
                        _ => self.edf_variance(block)?,
                    });
                }
                BlockKind::Score { component, prior } => {
                    tau2.push(match prior {
                        VariancePrior::Fixed { value } => *value,
                        _ => self.basis.eigenvalues[*component].max(1e-8),
                    });
                }
            }
            betas.push(beta);
        }
        self.state(betas, tau2)
    }

    /// `τ²` with `tr((XᵀX + K/τ²)⁻¹ XᵀX) ≈ min(5, dim/2)`.
    fn edf_variance(&self, block: &Block) -> Result<f64> {
        let x = self.primary_design(block);
        let xtx = x.tr_mul(x);
        let k = &block.penalty;
        let target = (block.dim as f64 / 2.0).min(5.0);
        let edf = |log_tau2: f64| -> Result<f64> {
            let a = &xtx + k / log_tau2.exp();
            let (ch, _) = cholesky_with_ridge(&a)?;
            Ok(ch.solve(&xtx).trace())
        };
        let (mut lo, mut hi) = (-25.0_f64, 25.0_f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if edf(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }

    /// Newton direction for block `b` (per-subject for score blocks).
    fn newton_direction(&self, state: &State, b: usize) -> Result<DVector<f64>> {
        let block = &self.blocks[b];
        if let BlockKind::Score { component, .. } = block.kind {
            let (s, h) = self.score_block_derivatives(state, component, state.tau2[b]);
            return Ok(s.zip_map(&h, |s, h| s / (-h)));
        }
        let (s, h) = self.block_derivatives(state, b);
        let (ch, _) = cholesky_with_ridge(&(-h))?;
        Ok(ch.solve(&s))
    }

    /// Blockwise Newton–Raphson with step halving; variances stay fixed.
    pub fn posterior_mode(&self, start: Option<State>, config: &ModeConfig) -> Result<ModeResult> {
        let mut state = match start {
            Some(s) => s,
            None => self.initial_state()?,
        };
        let mut lp = self.log_posterior(&state);
        if !lp.is_finite() {
            return Err(Error::Optimization(format!("non-finite log-posterior at the starting values ({lp})")));
        }
        let mut decreases = 0;
        for cycle in 1..=config.max_cycles {
            let lp_old = lp;
            for b in 0..self.blocks.len() {
                let dir = match self.newton_direction(&state, b) {
                    Ok(d) if d.iter().all(|v| v.is_finite()) => d,
                    _ => continue,
                };
                let block = &self.blocks[b];
                let mut step = if block.step < 1.0 { config.survival_step } else { 1.0 };
                for _ in 0..=config.max_halvings {
                    let mut trial = state.clone();
                    let beta = &state.betas[b] + &dir * step;
                    self.set_block(&mut trial, b, beta);
                    let lp_trial = self.log_posterior(&trial);
                    // Changes below rounding level of the log-posterior count
                    // as non-decreasing so exact Newton steps are not refused.
                    if lp_trial.is_finite() && lp_trial >= lp - 1e-13 * lp.abs().max(1.0) {
                        state = trial;
                        lp = lp_trial;
                        break;
                    }
                    step *= 0.5;
                }
            }
            if lp < lp_old - 1e-11 * lp_old.abs().max(1.0) {
                decreases += 1;
                if decreases >= config.max_decreases {
                    return Err(Error::Optimization(format!(
                        "log-posterior decreased in {decreases} consecutive cycles"
                    )));
                }
            } else {
                decreases = 0;
            }
            let rel = (lp - lp_old).abs() / lp_old.abs().max(1.0);
            log::debug!("mode cycle {cycle}: log-posterior {lp:.6} (relative change {rel:.2e})");
            if rel < config.tolerance {
                return Ok(ModeResult { state, cycles: cycle, converged: true, log_posterior: lp });
            }
        }
        log::warn!("posterior-mode search stopped after {} cycles without convergence", config.max_cycles);
        Ok(ModeResult { state, cycles: config.max_cycles, converged: false, log_posterior: lp })
    }
}
