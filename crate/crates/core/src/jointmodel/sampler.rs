//! Metropolis–Hastings sampler with Newton-type (Taylor) proposals and
//! Gibbs/slice updates of the variance parameters.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{gaussian_log_density, BlockKind, JointModel, State};
use super::spec::VariancePrior;
use crate::error::{Error, Result};
use crate::linalg::cholesky_with_ridge;

/// Length, burn-in, thinning and seed of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { iterations: 5500, burnin: 500, thin: 5, seed: 1 }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burnin >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burnin, self.iterations
            )));
        }
        Ok(())
    }

    /// Number of stored draws.
    pub fn num_draws(&self) -> usize {
        (self.iterations - self.burnin) / self.thin
    }

    /// Whether iteration `iter` (0-based) is stored.
    pub fn keeps(&self, iter: usize) -> bool {
        iter >= self.burnin && (iter + 1 - self.burnin).is_multiple_of(self.thin)
    }
}

/// Stored draws of one chain.
#[derive(Debug, Clone)]
pub struct Chain {
    /// Per block, `draws × dim` in the original parameterisation.
    pub samples: Vec<DMatrix<f64>>,
    /// Per block, the `τ²` draws for blocks with a variance parameter.
    pub tau2: Vec<Option<Vec<f64>>>,
    /// Per block, the fraction of accepted proposals (per subject for
    /// score blocks).
    pub acceptance: Vec<f64>,
    /// Smallest acceptance probability seen per block.
    pub min_accept_prob: Vec<f64>,
    pub last: State,
}

/// Gaussian Taylor proposal around the current state of a coefficient block.
struct Proposal {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
}

impl JointModel {
    fn taylor_proposal(&self, state: &State, b: usize) -> Option<Proposal> {
        let (s, h) = self.block_derivatives(state, b);
        if !s.iter().chain(h.iter()).all(|v| v.is_finite()) {
            return None;
        }
        let (ch, _) = cholesky_with_ridge(&(-h)).ok()?;
        let mean = &state.betas[b] + ch.solve(&s);
        Some(Proposal { mean, chol_l: ch.l() })
    }

    /// One MH update of a coefficient block; returns the acceptance
    /// probability and whether the move was accepted.
    fn update_coefficients<R: Rng>(&self, state: &mut State, b: usize, rng: &mut R) -> (f64, bool) {
        let Some(fwd) = self.taylor_proposal(state, b) else { return (0.0, false) };
        let z =
            DVector::from_iterator(fwd.mean.len(), (0..fwd.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = fwd.chol_l.transpose().solve_upper_triangular(&z).expect("triangular factor is invertible");
        let beta_prop = &fwd.mean + step;
        let mut prop = state.clone();
        self.set_block(&mut prop, b, beta_prop.clone());
        let lp_prop = self.log_posterior(&prop);
        if !lp_prop.is_finite() {
            return (0.0, false);
        }
        let Some(rev) = self.taylor_proposal(&prop, b) else { return (0.0, false) };
        let lp_cur = self.log_posterior(state);
        let log_alpha = lp_prop - lp_cur + gaussian_log_density(&state.betas[b], &rev.mean, &rev.chol_l)
            - gaussian_log_density(&beta_prop, &fwd.mean, &fwd.chol_l);
        let prob = log_alpha.min(0.0).exp();
        if rng.random::<f64>().ln() < log_alpha {
            *state = prop;
            (prob, true)
        } else {
            (prob, false)
        }
    }

    /// Joint proposal of all subjects' scores for one component with
    /// independent accept/reject per subject. Returns the number accepted
    /// and the smallest acceptance probability.
    fn update_scores<R: Rng>(&self, state: &mut State, b: usize, rng: &mut R) -> (usize, f64) {
        let BlockKind::Score { component: m, .. } = self.blocks[b].kind else { unreachable!() };
        let tau2 = state.tau2[b];
        let n = self.num_subjects;
        let (s, h) = self.score_block_derivatives(state, m, tau2);
        let rho = state.betas[b].clone();
        let prec = h.map(|v| -v);
        let mean = DVector::from_iterator(n, (0..n).map(|i| rho[i] + s[i] / prec[i]));
        let prop_rho =
            DVector::from_iterator(n, (0..n).map(|i| mean[i] + rng.sample::<f64, _>(StandardNormal) / prec[i].sqrt()));
        let mut prop = state.clone();
        self.set_block(&mut prop, b, prop_rho.clone());
        let (s2, h2) = self.score_block_derivatives(&prop, m, tau2);
        let ll_cur = self.loglik_by_subject(&state.etas);
        let ll_prop = self.loglik_by_subject(&prop.etas);
        let log_q = |x: f64, mu: f64, p: f64| 0.5 * p.ln() - 0.5 * p * (x - mu).powi(2);
        let mut accepted = rho.clone();
        let mut count = 0;
        let mut min_prob: f64 = 1.0;
        for i in 0..n {
            let p2 = -h2[i];
            let log_alpha = if ll_prop[i].is_finite() && p2 > 0.0 && p2.is_finite() && prec[i] > 0.0 {
                let mean_rev = prop_rho[i] + s2[i] / p2;
                ll_prop[i] - prop_rho[i].powi(2) / (2.0 * tau2) - ll_cur[i]
                    + rho[i].powi(2) / (2.0 * tau2)
                    + log_q(rho[i], mean_rev, p2)
                    - log_q(prop_rho[i], mean[i], prec[i])
            } else {
                f64::NEG_INFINITY
            };
            min_prob = min_prob.min(log_alpha.min(0.0).exp());
            if rng.random::<f64>().ln() < log_alpha {
                accepted[i] = prop_rho[i];
                count += 1;
            }
        }
        if count == n {
            *state = prop;
        } else if count > 0 {
            self.set_block(state, b, accepted);
        }
        (count, min_prob)
    }

    /// Draws `τ²` of block `b` from its full conditional.
    fn update_variance<R: Rng>(&self, state: &mut State, b: usize, rng: &mut R) {
        let block = &self.blocks[b];
        let Some(prior) = block.variance_prior() else { return };
        let beta = &state.betas[b];
        let quad = match block.kind {
            BlockKind::Score { .. } => beta.dot(beta),
            _ => (beta.transpose() * &block.penalty * beta)[(0, 0)],
        };
        let rank = block.penalty_rank() as f64;
        match prior {
            VariancePrior::Fixed { .. } => {}
            VariancePrior::InverseGamma { a, b: rate } => {
                let (shape, rate) = inverse_gamma_conditional(a, rate, block.penalty_rank(), quad);
                let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
                state.tau2[b] = 1.0 / g.sample(rng);
            }
            VariancePrior::HalfCauchy { scale } => {
                let target = |theta: f64| -> f64 {
                    -0.5 * rank * theta - 0.5 * quad * (-theta).exp() - (theta.exp() / (scale * scale)).ln_1p()
                        + 0.5 * theta
                };
                state.tau2[b] = slice_sample(state.tau2[b].ln(), target, 1.0, 50, rng).exp();
            }
        }
    }

    /// Runs a chain from `start`.
    pub fn mcmc_sample(&self, start: State, config: &ChainConfig) -> Result<Chain> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut state = start;
        let nb = self.blocks.len();
        let draws = config.num_draws();
        let mut samples: Vec<DMatrix<f64>> = self.blocks.iter().map(|b| DMatrix::zeros(draws, b.dim)).collect();
        let mut tau2: Vec<Option<Vec<f64>>> =
            self.blocks.iter().map(|b| b.has_variance().then(|| Vec::with_capacity(draws))).collect();
        let mut accepted = vec![0usize; nb];
        let mut proposed = vec![0usize; nb];
        let mut min_prob = vec![1.0_f64; nb];
        let mut stored = 0;
        for iter in 0..config.iterations {
            for b in 0..nb {
                if matches!(self.blocks[b].kind, BlockKind::Score { .. }) {
                    let (count, p) = self.update_scores(&mut state, b, &mut rng);
                    accepted[b] += count;
                    proposed[b] += self.num_subjects;
                    min_prob[b] = min_prob[b].min(p);
                } else {
                    let (p, acc) = self.update_coefficients(&mut state, b, &mut rng);
                    accepted[b] += acc as usize;
                    proposed[b] += 1;
                    min_prob[b] = min_prob[b].min(p);
                }
                if self.blocks[b].has_variance() {
                    self.update_variance(&mut state, b, &mut rng);
                }
            }
            if iter + 1 == 500.min(config.iterations) {
                for b in 0..nb {
                    let rate = accepted[b] as f64 / proposed[b].max(1) as f64;
                    if rate < 0.01 {
                        log::warn!("block {} accepted only {:.2}% of proposals", self.blocks[b].name, 100.0 * rate);
                    }
                }
            }
            if config.keeps(iter) && stored < draws {
                for b in 0..nb {
                    let orig = self.blocks[b].to_original(&state.betas[b]);
                    samples[b].row_mut(stored).copy_from(&orig.transpose());
                    if let Some(t) = tau2[b].as_mut() {
                        t.push(state.tau2[b]);
                    }
                }
                stored += 1;
            }
        }
        let acceptance = accepted.iter().zip(&proposed).map(|(&a, &p)| a as f64 / p.max(1) as f64).collect();
        Ok(Chain { samples, tau2, acceptance, min_accept_prob: min_prob, last: state })
    }
}

/// Shape and rate of the inverse-gamma full conditional of `τ²` given the
/// prior `IG(a, b)`, the penalty rank and the quadratic form `βᵀKβ`.
pub fn inverse_gamma_conditional(a: f64, b: f64, rank: usize, quad: f64) -> (f64, f64) {
    (a + 0.5 * rank as f64, b + 0.5 * quad)
}

/// Univariate slice sampler with stepping out (width `w`, at most `max_steps`
/// expansions on each side) and shrinkage.
pub fn slice_sample<F: Fn(f64) -> f64, R: Rng>(x0: f64, f: F, w: f64, max_steps: usize, rng: &mut R) -> f64 {
    let fx0 = f(x0);
    let log_y = fx0 + rng.random::<f64>().ln();
    let u: f64 = rng.random();
    let mut left = x0 - w * u;
    let mut right = left + w;
    let j = (rng.random::<f64>() * max_steps as f64).floor() as usize;
    let mut k = max_steps.saturating_sub(1) - j.min(max_steps.saturating_sub(1));
    let mut j = j;
    while j > 0 && f(left) > log_y {
        left -= w;
        j -= 1;
    }
    while k > 0 && f(right) > log_y {
        right += w;
        k -= 1;
    }
    loop {
        let x1 = left + rng.random::<f64>() * (right - left);
        if f(x1) >= log_y {
            return x1;
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
        if (right - left) < 1e-14 {
            return x0;
        }
    }
}
