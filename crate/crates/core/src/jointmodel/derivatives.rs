//! Score vectors and Hessians of the log-posterior with respect to one block.

use nalgebra::{DMatrix, DVector};

use super::model::{BlockKind, JointModel, State};
use super::spec::Predictor;
use crate::linalg::weighted_crossprod;

/// Per-location first and second derivative weights of the log-likelihood
/// with respect to a predictor.
struct Weights {
    obs: Option<(DVector<f64>, DVector<f64>)>,
    surv: Option<(DVector<f64>, DVector<f64>)>,
    nodes: Option<(DVector<f64>, DVector<f64>)>,
}

impl JointModel {
    fn predictor_weights(&self, state: &State, p: Predictor) -> Weights {
        let e = &state.etas;
        let n = self.num_subjects;
        let nodes_times = |v: &DVector<f64>, pow: i32| {
            DVector::from_iterator(
                e.node_hazard.len(),
                e.node_hazard.iter().zip(v.iter()).map(|(c, x)| -c * x.powi(pow)),
            )
        };
        match p {
            Predictor::Lambda => {
                let h = -e.node_hazard.clone();
                Weights { obs: None, surv: Some((self.delta.clone(), DVector::zeros(n))), nodes: Some((h.clone(), h)) }
            }
            Predictor::Gamma => {
                let g = &self.delta - &e.cumhaz;
                Weights { obs: None, surv: Some((g, -e.cumhaz.clone())), nodes: None }
            }
            Predictor::Alpha(k) => {
                let g = self.delta.component_mul(&e.mu_surv[k]);
                Weights {
                    obs: None,
                    surv: Some((g, DVector::zeros(n))),
                    nodes: Some((nodes_times(&e.mu_nodes[k], 1), nodes_times(&e.mu_nodes[k], 2))),
                }
            }
            Predictor::Mu(k) => {
                let rows = &self.markers[k];
                let prec = e.sigma_obs[k].map(|s| (-2.0 * s).exp());
                let g = (&rows.y - &e.mu_obs[k]).component_mul(&prec);
                let g_surv = self.delta.component_mul(&e.alpha_surv[k]);
                Weights {
                    obs: Some((g, -prec)),
                    surv: Some((g_surv, DVector::zeros(n))),
                    nodes: Some((nodes_times(&e.alpha_nodes[k], 1), nodes_times(&e.alpha_nodes[k], 2))),
                }
            }
            Predictor::Sigma(k) => {
                let rows = &self.markers[k];
                let r2 = (&rows.y - &e.mu_obs[k]).map(|r| r * r);
                let z = r2.component_mul(&e.sigma_obs[k].map(|s| (-2.0 * s).exp()));
                Weights { obs: Some((z.map(|v| v - 1.0), z * -2.0)), surv: None, nodes: None }
            }
        }
    }

    /// Gradient and Hessian of the log-posterior in block `b`. Score blocks
    /// return a diagonal Hessian (subjects are conditionally independent).
    pub fn block_derivatives(&self, state: &State, b: usize) -> (DVector<f64>, DMatrix<f64>) {
        let block = &self.blocks[b];
        if let BlockKind::Score { component, .. } = block.kind {
            let (s, h) = self.score_block_derivatives(state, component, state.tau2[b]);
            return (s, DMatrix::from_diagonal(&h));
        }
        let p = block.predictor.expect("coefficient block without predictor");
        let w = self.predictor_weights(state, p);
        let mut score = DVector::zeros(block.dim);
        let mut hess = DMatrix::zeros(block.dim, block.dim);
        for (x, wt) in [(&block.x_obs, &w.obs), (&block.x_surv, &w.surv), (&block.x_nodes, &w.nodes)] {
            if let (Some(x), Some((g, h))) = (x, wt) {
                score.gemv_tr(1.0, x, g, 1.0);
                hess += weighted_crossprod(x, h);
            }
        }
        let scale = match block.kind {
            BlockKind::Parametric => 1.0,
            _ => 1.0 / state.tau2[b],
        };
        score -= &block.penalty * &state.betas[b] * scale;
        hess -= &block.penalty * scale;
        (score, hess)
    }

    /// Gradient of the log-posterior in block `b`.
    pub fn score(&self, state: &State, b: usize) -> DVector<f64> {
        self.block_derivatives(state, b).0
    }

    /// Hessian of the log-posterior in block `b`.
    pub fn hessian(&self, state: &State, b: usize) -> DMatrix<f64> {
        self.block_derivatives(state, b).1
    }

    /// Per-subject gradient and second derivative for the scores of
    /// component `m`.
    pub fn score_block_derivatives(&self, state: &State, m: usize, tau2: f64) -> (DVector<f64>, DVector<f64>) {
        let e = &state.etas;
        let n = self.num_subjects;
        let q = self.nodes_per_subject;
        let rho = &state.betas[self.score_block_index(m)];
        let mut s = DVector::zeros(n);
        let mut h = DVector::zeros(n);
        for (k, rows) in self.markers.iter().enumerate() {
            for (r, &i) in rows.subject.iter().enumerate() {
                let prec = (-2.0 * e.sigma_obs[k][r]).exp();
                let psi = rows.psi[(r, m)];
                s[i] += psi * (rows.y[r] - e.mu_obs[k][r]) * prec;
                h[i] -= psi * psi * prec;
            }
            for i in 0..n {
                s[i] += self.delta[i] * e.alpha_surv[k][i] * self.psi_surv[k][(i, m)];
            }
        }
        for r in 0..n * q {
            let i = r / q;
            let mut d = 0.0;
            for k in 0..self.num_markers {
                d += e.alpha_nodes[k][r] * self.psi_nodes[k][(r, m)];
            }
            let c = e.node_hazard[r];
            s[i] -= c * d;
            h[i] -= c * d * d;
        }
        for i in 0..n {
            s[i] -= rho[i] / tau2;
            h[i] -= 1.0 / tau2;
        }
        (s, h)
    }

    /// Block index of the scores of component `m`.
    pub fn score_block_index(&self, m: usize) -> usize {
        self.blocks
            .iter()
            .position(|b| matches!(b.kind, BlockKind::Score { component, .. } if component == m))
            .expect("score block exists for every component")
    }
}
