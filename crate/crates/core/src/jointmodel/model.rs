//! Compiled joint model: evaluation points, coefficient blocks, predictor
//! caches and the log-likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spec::{ModelSpec, Predictor, Term, VariancePrior};
use crate::data::LongSurvDataset;
use crate::error::{Error, Result};
use crate::fpca::MfpcBasis;
use crate::linalg::psd_rank;
use crate::quadrature::QuadratureRule;
use crate::splinekit::{term_design, TermDesign, TermLabel};

const LN_2PI: f64 = 1.8378770664093453;

/// How the coefficients of a block are a priori distributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    /// Intercept and linear terms of one predictor, fixed Gaussian prior.
    Parametric,
    /// One penalised smooth term with variance `τ²`.
    Smooth { prior: VariancePrior, rank: usize },
    /// Scores `ρ_(m)` of component `m` for all subjects, prior `N(0, τ²_(m) I)`.
    Score { component: usize, prior: VariancePrior },
}

/// A term and the columns it occupies in its block.
#[derive(Debug, Clone)]
pub struct TermSlot {
    pub term: Term,
    pub start: usize,
    pub design: TermDesign,
}

/// A group of coefficients updated together.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub predictor: Option<Predictor>,
    pub dim: usize,
    /// Designs (internal parameterisation) at the longitudinal observations
    /// of the predictor's marker, the follow-up times and the quadrature
    /// nodes, whichever apply.
    pub x_obs: Option<DMatrix<f64>>,
    pub x_surv: Option<DMatrix<f64>>,
    pub x_nodes: Option<DMatrix<f64>>,
    /// Prior precision (divided by `τ²` for variance blocks).
    pub penalty: DMatrix<f64>,
    /// Original coefficients are `transform * internal`.
    pub transform: Option<DMatrix<f64>>,
    pub slots: Vec<TermSlot>,
    pub labels: Vec<String>,
    /// Newton step length in posterior-mode search.
    pub step: f64,
}

impl Block {
    pub fn has_variance(&self) -> bool {
        match &self.kind {
            BlockKind::Parametric => false,
            BlockKind::Smooth { prior, .. } | BlockKind::Score { prior, .. } => {
                !matches!(prior, VariancePrior::Fixed { .. })
            }
        }
    }

    pub fn variance_prior(&self) -> Option<VariancePrior> {
        match &self.kind {
            BlockKind::Parametric => None,
            BlockKind::Smooth { prior, .. } | BlockKind::Score { prior, .. } => Some(*prior),
        }
    }

    pub fn penalty_rank(&self) -> usize {
        match &self.kind {
            BlockKind::Parametric => self.dim,
            BlockKind::Smooth { rank, .. } => *rank,
            BlockKind::Score { .. } => self.dim,
        }
    }

    /// Maps internal coefficients to the original parameterisation.
    pub fn to_original(&self, beta: &DVector<f64>) -> DVector<f64> {
        match &self.transform {
            Some(t) => t * beta,
            None => beta.clone(),
        }
    }

    /// Maps original coefficients to the internal parameterisation.
    pub fn to_internal(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.transform {
            Some(t) => t
                .clone()
                .lu()
                .solve(beta)
                .ok_or_else(|| Error::Numerical(format!("singular standardisation of block {}", self.name))),
            None => Ok(beta.clone()),
        }
    }
}

/// Longitudinal observations of one marker, stacked subject-major.
#[derive(Debug, Clone)]
pub struct MarkerRows {
    pub times: Vec<Vec<f64>>,
    pub y: DVector<f64>,
    pub subject: Vec<usize>,
    /// Rows of subject `i` are `offsets[i]..offsets[i + 1]`.
    pub offsets: Vec<usize>,
    /// `rows × M` eigenfunction values.
    pub psi: DMatrix<f64>,
}

/// Additive predictors at all evaluation points plus derived hazard terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Etas {
    pub lambda_surv: DVector<f64>,
    pub lambda_nodes: DVector<f64>,
    pub gamma: DVector<f64>,
    pub alpha_surv: Vec<DVector<f64>>,
    pub alpha_nodes: Vec<DVector<f64>>,
    pub mu_obs: Vec<DVector<f64>>,
    pub mu_surv: Vec<DVector<f64>>,
    pub mu_nodes: Vec<DVector<f64>>,
    pub sigma_obs: Vec<DVector<f64>>,
    /// `e^{γ_i} W_q exp(η_λ + Σ_k η_αk η_μk)` at each node.
    pub node_hazard: DVector<f64>,
    /// `Λ_i(T_i)`.
    pub cumhaz: DVector<f64>,
}

/// Coefficients and variances of all blocks with their predictor cache.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// Internal-parameterisation coefficients per block.
    pub betas: Vec<DVector<f64>>,
    /// `τ²` per block (unused for parametric blocks).
    pub tau2: Vec<f64>,
    pub etas: Etas,
}

/// Where a block's design is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Obs,
    Surv,
    Nodes,
}

/// A joint model compiled against one dataset and basis.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub spec: ModelSpec,
    pub data: LongSurvDataset,
    pub basis: MfpcBasis,
    pub rule: QuadratureRule,
    pub num_markers: usize,
    pub num_subjects: usize,
    pub num_components: usize,
    pub markers: Vec<MarkerRows>,
    pub delta: DVector<f64>,
    /// Per subject, quadrature node times on `[0, T_i]`.
    pub node_times: Vec<Vec<f64>>,
    /// Flattened node weights (`n × Q`).
    pub node_weights: DVector<f64>,
    pub nodes_per_subject: usize,
    /// `ψ^(k)` at follow-up times (`n × M`) and nodes (`nQ × M`).
    pub psi_surv: Vec<DMatrix<f64>>,
    pub psi_nodes: Vec<DMatrix<f64>>,
    pub blocks: Vec<Block>,
}

fn locations(p: Predictor) -> &'static [Location] {
    match p {
        Predictor::Lambda | Predictor::Alpha(_) => &[Location::Surv, Location::Nodes],
        Predictor::Gamma => &[Location::Surv],
        Predictor::Mu(_) => &[Location::Obs, Location::Surv, Location::Nodes],
        Predictor::Sigma(_) => &[Location::Obs],
    }
}

fn primary_location(p: Predictor) -> Location {
    match p {
        Predictor::Mu(_) | Predictor::Sigma(_) => Location::Obs,
        _ => Location::Surv,
    }
}

fn hstack(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts[0].nrows();
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), p.shape()).copy_from(p);
        c += p.ncols();
    }
    out
}

fn term_label(p: Predictor, term: &Term) -> String {
    match term {
        Term::Intercept => format!("{p}:(Intercept)"),
        Term::Linear { covariates } => format!("{p}:{}", covariates.join("*")),
        Term::Smooth(s) => format!("{p}:s({})", s.variable),
        Term::Mfpc => format!("{p}:mfpc"),
    }
}

/// Standardises the columns of a parametric survival design (rows at the
/// follow-up times): nonconstant columns are centred (if an intercept column
/// is present) and scaled to unit standard deviation. Returns the
/// standardised design `X T` and `T`; original coefficients are `T β̃`.
pub fn standardize_survival_designs(x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    match standardization(x, "survival design") {
        Some(t) => (x * &t, t),
        None => (x.clone(), DMatrix::identity(x.ncols(), x.ncols())),
    }
}

/// Standardisation of the parametric survival design (rows at the
/// follow-up times): returns `T` with `X̃ = X T`, or `None` when nothing
/// changes.
fn standardization(x: &DMatrix<f64>, name: &str) -> Option<DMatrix<f64>> {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let stats: Vec<(f64, f64)> = x
        .column_iter()
        .map(|c| {
            let m = c.mean();
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, sd)
        })
        .collect();
    let is_const = |j: usize| stats[j].1 <= 1e-12 * stats[j].0.abs().max(1.0);
    let intercept = (0..d).find(|&j| is_const(j) && stats[j].0 != 0.0);
    let mut t = DMatrix::identity(d, d);
    let mut changed = false;
    for j in 0..d {
        if is_const(j) {
            if stats[j].0 == 0.0 {
                log::warn!("block {name}: column {j} is identically zero; left unstandardised");
            }
            continue;
        }
        let (m, sd) = stats[j];
        t[(j, j)] = 1.0 / sd;
        if let Some(c) = intercept {
            t[(c, j)] = -m / (sd * stats[c].0);
        }
        changed = true;
    }
    changed.then_some(t)
}

impl JointModel {
    pub fn new(spec: ModelSpec, data: LongSurvDataset, basis: MfpcBasis) -> Result<Self> {
        spec.validate()?;
        data.validate()?;
        basis.validate()?;
        let k = spec.num_markers;
        if data.num_markers != k {
            return Err(Error::Schema(format!("model declares {k} markers, data has {}", data.num_markers)));
        }
        if basis.num_markers() != k {
            return Err(Error::Schema(format!("basis has {} markers, model declares {k}", basis.num_markers())));
        }
        let n = data.num_subjects();
        let m = basis.num_components();
        let rule = spec.quadrature.rule();
        let q = rule.len();

        let mut markers = Vec::with_capacity(k);
        for kk in 0..k {
            let times: Vec<Vec<f64>> =
                data.longitudinal.iter().map(|o| o[kk].iter().map(|x| x.time).collect()).collect();
            let y = DVector::from_iterator(
                data.num_observations(kk),
                data.longitudinal.iter().flat_map(|o| o[kk].iter().map(|x| x.value)),
            );
            let mut subject = Vec::new();
            let mut offsets = vec![0];
            for (i, t) in times.iter().enumerate() {
                subject.extend(std::iter::repeat_n(i, t.len()));
                offsets.push(offsets[i] + t.len());
            }
            let psi = psi_matrix(&basis, kk, &times)?;
            markers.push(MarkerRows { times, y, subject, offsets, psi });
        }
        let surv_times: Vec<Vec<f64>> = data.subjects.iter().map(|s| vec![s.time]).collect();
        let mut node_times = Vec::with_capacity(n);
        let mut node_weights = Vec::with_capacity(n * q);
        for s in &data.subjects {
            let (t, w): (Vec<f64>, Vec<f64>) = rule.scaled(s.time).unzip();
            node_times.push(t);
            node_weights.extend(w);
        }
        let psi_surv = (0..k).map(|kk| psi_matrix(&basis, kk, &surv_times)).collect::<Result<Vec<_>>>()?;
        let psi_nodes = (0..k).map(|kk| psi_matrix(&basis, kk, &node_times)).collect::<Result<Vec<_>>>()?;
        let delta = DVector::from_iterator(n, data.subjects.iter().map(|s| if s.event { 1.0 } else { 0.0 }));

        let mut model = Self {
            spec,
            data,
            basis,
            rule,
            num_markers: k,
            num_subjects: n,
            num_components: m,
            markers,
            delta,
            node_times,
            node_weights: DVector::from_vec(node_weights),
            nodes_per_subject: q,
            psi_surv,
            psi_nodes,
            blocks: Vec::new(),
        };
        model.blocks = model.build_blocks()?;
        Ok(model)
    }

    /// Per-subject times of a location type for marker `k`.
    fn location_times(&self, loc: Location, k: Option<usize>) -> Vec<Vec<f64>> {
        match loc {
            Location::Obs => self.markers[k.expect("observation rows need a marker")].times.clone(),
            Location::Surv => self.data.subjects.iter().map(|s| vec![s.time]).collect(),
            Location::Nodes => self.node_times.clone(),
        }
    }

    fn build_blocks(&self) -> Result<Vec<Block>> {
        let mut blocks = Vec::new();
        for p in Predictor::all(self.num_markers) {
            let terms = self.spec.terms(p);
            let primary = self.location_times(primary_location(p), p.marker());
            let mut parametric: Vec<TermSlot> = Vec::new();
            let mut dim = 0;
            for (h, term) in terms.iter().enumerate() {
                let label = TermLabel { predictor: p, term: h };
                match term {
                    Term::Mfpc => {}
                    Term::Intercept | Term::Linear { .. } => {
                        let design = term_design(label, term, &self.data, &primary, None)?;
                        parametric.push(TermSlot { term: term.clone(), start: dim, design });
                        dim += 1;
                    }
                    Term::Smooth(s) => {
                        let design = term_design(label, term, &self.data, &primary, None)?;
                        let slot = TermSlot { term: term.clone(), start: 0, design };
                        let d = slot.design.num_coefficients();
                        let rank = psd_rank(&slot.design.penalty);
                        let labels = (1..=d).map(|j| format!("{}[{j}]", term_label(p, term))).collect();
                        let mut block = self.block_from_slots(
                            format!("{p}.s{h}"),
                            BlockKind::Smooth { prior: s.prior, rank },
                            p,
                            vec![slot],
                            labels,
                        )?;
                        block.penalty = block.slots[0].design.penalty.clone();
                        blocks.push(block);
                    }
                }
            }
            if !parametric.is_empty() {
                let labels = parametric.iter().map(|s| term_label(p, &s.term)).collect();
                let mut block =
                    self.block_from_slots(format!("{p}.p"), BlockKind::Parametric, p, parametric, labels)?;
                let prec = 1.0 / self.spec.fixed_prior_sd.powi(2);
                let base = DMatrix::identity(block.dim, block.dim) * prec;
                if self.spec.standardize_survival && matches!(p, Predictor::Lambda | Predictor::Gamma) {
                    if let Some(t) = standardization(block.x_surv.as_ref().unwrap(), &block.name) {
                        for x in [&mut block.x_obs, &mut block.x_surv, &mut block.x_nodes].into_iter().flatten() {
                            *x = &*x * &t;
                        }
                        block.penalty = t.transpose() * base * &t;
                        block.transform = Some(t);
                    } else {
                        block.penalty = base;
                    }
                } else {
                    block.penalty = base;
                }
                blocks.push(block);
            }
        }
        for m in 0..self.num_components {
            blocks.push(Block {
                name: format!("rho{}", m + 1),
                kind: BlockKind::Score { component: m, prior: self.spec.mfpc_prior },
                predictor: None,
                dim: self.num_subjects,
                x_obs: None,
                x_surv: None,
                x_nodes: None,
                penalty: DMatrix::zeros(0, 0),
                transform: None,
                slots: Vec::new(),
                labels: self.data.subjects.iter().map(|s| format!("rho{}[{}]", m + 1, s.id)).collect(),
                step: 1.0,
            });
        }
        Ok(blocks)
    }

    fn block_from_slots(
        &self,
        name: String,
        kind: BlockKind,
        p: Predictor,
        slots: Vec<TermSlot>,
        labels: Vec<String>,
    ) -> Result<Block> {
        let mut x_obs = None;
        let mut x_surv = None;
        let mut x_nodes = None;
        for &loc in locations(p) {
            let times = self.location_times(loc, p.marker());
            let parts =
                slots.iter().map(|s| s.design.evaluate(&s.term, &self.data, &times)).collect::<Result<Vec<_>>>()?;
            let x = hstack(&parts);
            match loc {
                Location::Obs => x_obs = Some(x),
                Location::Surv => x_surv = Some(x),
                Location::Nodes => x_nodes = Some(x),
            }
        }
        let dim = labels.len();
        let step = if matches!(p, Predictor::Lambda | Predictor::Gamma) { 0.1 } else { 1.0 };
        Ok(Block {
            name,
            kind,
            predictor: Some(p),
            dim,
            x_obs,
            x_surv,
            x_nodes,
            penalty: DMatrix::zeros(dim, dim),
            transform: None,
            slots,
            labels,
            step,
        })
    }

    /// Index of the block named `name`.
    pub fn block_index(&self, name: &str) -> Result<usize> {
        self.blocks.iter().position(|b| b.name == name).ok_or_else(|| Error::Config(format!("unknown block '{name}'")))
    }

    // ------------------------------------------------------------------
    // Predictor evaluation
    // ------------------------------------------------------------------

    fn zero_etas(&self) -> Etas {
        let n = self.num_subjects;
        let nq = n * self.nodes_per_subject;
        let k = self.num_markers;
        let obs = |kk: usize| DVector::zeros(self.markers[kk].y.len());
        Etas {
            lambda_surv: DVector::zeros(n),
            lambda_nodes: DVector::zeros(nq),
            gamma: DVector::zeros(n),
            alpha_surv: vec![DVector::zeros(n); k],
            alpha_nodes: vec![DVector::zeros(nq); k],
            mu_obs: (0..k).map(obs).collect(),
            mu_surv: vec![DVector::zeros(n); k],
            mu_nodes: vec![DVector::zeros(nq); k],
            sigma_obs: (0..k).map(obs).collect(),
            node_hazard: DVector::zeros(nq),
            cumhaz: DVector::zeros(n),
        }
    }

    /// Adds the contribution of `delta` in block `b` to the predictors.
    pub fn apply_delta(&self, etas: &mut Etas, b: usize, delta: &DVector<f64>) {
        let block = &self.blocks[b];
        match (&block.kind, block.predictor) {
            (BlockKind::Score { component, .. }, _) => {
                let m = *component;
                for kk in 0..self.num_markers {
                    let rows = &self.markers[kk];
                    for (r, &i) in rows.subject.iter().enumerate() {
                        etas.mu_obs[kk][r] += rows.psi[(r, m)] * delta[i];
                    }
                    for i in 0..self.num_subjects {
                        etas.mu_surv[kk][i] += self.psi_surv[kk][(i, m)] * delta[i];
                    }
                    let q = self.nodes_per_subject;
                    for r in 0..self.num_subjects * q {
                        etas.mu_nodes[kk][r] += self.psi_nodes[kk][(r, m)] * delta[r / q];
                    }
                }
            }
            (_, Some(p)) => {
                for &loc in locations(p) {
                    let (x, target) = match (loc, p) {
                        (Location::Obs, Predictor::Mu(k)) => (&block.x_obs, &mut etas.mu_obs[k]),
                        (Location::Obs, Predictor::Sigma(k)) => (&block.x_obs, &mut etas.sigma_obs[k]),
                        (Location::Surv, Predictor::Lambda) => (&block.x_surv, &mut etas.lambda_surv),
                        (Location::Surv, Predictor::Gamma) => (&block.x_surv, &mut etas.gamma),
                        (Location::Surv, Predictor::Alpha(k)) => (&block.x_surv, &mut etas.alpha_surv[k]),
                        (Location::Surv, Predictor::Mu(k)) => (&block.x_surv, &mut etas.mu_surv[k]),
                        (Location::Nodes, Predictor::Lambda) => (&block.x_nodes, &mut etas.lambda_nodes),
                        (Location::Nodes, Predictor::Alpha(k)) => (&block.x_nodes, &mut etas.alpha_nodes[k]),
                        (Location::Nodes, Predictor::Mu(k)) => (&block.x_nodes, &mut etas.mu_nodes[k]),
                        _ => unreachable!("location not used by predictor"),
                    };
                    target.gemv(1.0, x.as_ref().unwrap(), delta, 1.0);
                }
            }
            _ => unreachable!("non-score block without predictor"),
        }
    }

    /// Recomputes node hazards and cumulative hazards from the predictors.
    pub fn refresh_hazard(&self, etas: &mut Etas) {
        let q = self.nodes_per_subject;
        for i in 0..self.num_subjects {
            let eg = etas.gamma[i].exp();
            let mut cum = 0.0;
            for r in i * q..(i + 1) * q {
                let mut eta = etas.lambda_nodes[r];
                for kk in 0..self.num_markers {
                    eta += etas.alpha_nodes[kk][r] * etas.mu_nodes[kk][r];
                }
                let c = eg * self.node_weights[r] * eta.exp();
                etas.node_hazard[r] = c;
                cum += c;
            }
            etas.cumhaz[i] = cum;
        }
    }

    /// Predictors for the given internal coefficients.
    pub fn compute_etas(&self, betas: &[DVector<f64>]) -> Etas {
        let mut etas = self.zero_etas();
        for (b, beta) in betas.iter().enumerate() {
            self.apply_delta(&mut etas, b, beta);
        }
        self.refresh_hazard(&mut etas);
        etas
    }

    /// State from internal coefficients and variances.
    pub fn state(&self, betas: Vec<DVector<f64>>, tau2: Vec<f64>) -> Result<State> {
        if betas.len() != self.blocks.len() || tau2.len() != self.blocks.len() {
            return Err(Error::Config("one coefficient vector and variance per block required".into()));
        }
        for (b, beta) in betas.iter().enumerate() {
            if beta.len() != self.blocks[b].dim {
                return Err(Error::Config(format!(
                    "block {} has {} coefficients, got {}",
                    self.blocks[b].name,
                    self.blocks[b].dim,
                    beta.len()
                )));
            }
        }
        let etas = self.compute_etas(&betas);
        Ok(State { betas, tau2, etas })
    }

    /// Replaces the coefficients of block `b`, updating the cache.
    pub fn set_block(&self, state: &mut State, b: usize, beta: DVector<f64>) {
        let delta = &beta - &state.betas[b];
        self.apply_delta(&mut state.etas, b, &delta);
        state.betas[b] = beta;
        self.refresh_hazard(&mut state.etas);
    }

    // ------------------------------------------------------------------
    // Likelihood and prior
    // ------------------------------------------------------------------

    /// Longitudinal log-likelihood.
    pub fn loglik_long(&self, etas: &Etas) -> f64 {
        let mut ll = 0.0;
        for (kk, rows) in self.markers.iter().enumerate() {
            for r in 0..rows.y.len() {
                let s = etas.sigma_obs[kk][r];
                let res = rows.y[r] - etas.mu_obs[kk][r];
                ll += -0.5 * LN_2PI - s - 0.5 * res * res * (-2.0 * s).exp();
            }
        }
        ll
    }

    /// Survival log-likelihood `δᵀη(T) − Σ Λ_i(T_i)`.
    pub fn loglik_surv(&self, etas: &Etas) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.num_subjects {
            if self.delta[i] != 0.0 {
                ll += self.delta[i] * self.eta_hazard_at_t(etas, i);
            }
            ll -= etas.cumhaz[i];
        }
        ll
    }

    /// Log-hazard `η_i(T_i)`.
    pub fn eta_hazard_at_t(&self, etas: &Etas, i: usize) -> f64 {
        let mut eta = etas.lambda_surv[i] + etas.gamma[i];
        for kk in 0..self.num_markers {
            eta += etas.alpha_surv[kk][i] * etas.mu_surv[kk][i];
        }
        eta
    }

    /// Per-subject log-likelihood contributions (both submodels).
    pub fn loglik_by_subject(&self, etas: &Etas) -> DVector<f64> {
        let mut ll = DVector::zeros(self.num_subjects);
        for (kk, rows) in self.markers.iter().enumerate() {
            for (r, &i) in rows.subject.iter().enumerate() {
                let s = etas.sigma_obs[kk][r];
                let res = rows.y[r] - etas.mu_obs[kk][r];
                ll[i] += -0.5 * LN_2PI - s - 0.5 * res * res * (-2.0 * s).exp();
            }
        }
        for i in 0..self.num_subjects {
            ll[i] += self.delta[i] * self.eta_hazard_at_t(etas, i) - etas.cumhaz[i];
        }
        ll
    }

    /// Full log-likelihood; errors on non-finite predictors.
    pub fn log_likelihood(&self, state: &State) -> Result<f64> {
        let long = self.loglik_long(&state.etas);
        let surv = self.loglik_surv(&state.etas);
        if !long.is_finite() {
            return Err(Error::Numerical(format!("non-finite longitudinal log-likelihood ({long})")));
        }
        if !surv.is_finite() {
            return Err(Error::Numerical(format!("non-finite survival log-likelihood ({surv})")));
        }
        Ok(long + surv)
    }

    /// Log-prior of block `b`'s coefficients given its variance.
    pub fn log_prior_block(&self, state: &State, b: usize) -> f64 {
        let block = &self.blocks[b];
        let beta = &state.betas[b];
        match &block.kind {
            BlockKind::Parametric => -0.5 * (beta.transpose() * &block.penalty * beta)[(0, 0)],
            BlockKind::Smooth { rank, .. } => {
                let tau2 = state.tau2[b];
                -0.5 * (*rank as f64) * tau2.ln() - 0.5 * (beta.transpose() * &block.penalty * beta)[(0, 0)] / tau2
            }
            BlockKind::Score { .. } => {
                let tau2 = state.tau2[b];
                -0.5 * block.dim as f64 * tau2.ln() - 0.5 * beta.dot(beta) / tau2
            }
        }
    }

    /// Log-posterior up to a constant (coefficient priors only; variance
    /// hyperpriors are handled by the variance updates).
    pub fn log_posterior(&self, state: &State) -> f64 {
        let mut lp = self.loglik_long(&state.etas) + self.loglik_surv(&state.etas);
        for b in 0..self.blocks.len() {
            lp += self.log_prior_block(state, b);
        }
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    /// Cumulative hazard `Λ_i(upper)` of subject `i`, evaluating all
    /// predictors afresh on the quadrature nodes of `[0, upper]`.
    pub fn cum_hazard(&self, state: &State, i: usize, upper: f64) -> Result<f64> {
        let t_i = self.data.subjects[i].time;
        if !(upper > 0.0 && upper <= t_i * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("upper limit {upper} outside (0, {t_i}]")));
        }
        let (nodes, weights): (Vec<f64>, Vec<f64>) = self.rule.scaled(upper).unzip();
        let eta = self.eta_hazard_at(state, i, &nodes)?;
        Ok(eta.iter().zip(&weights).map(|(e, w)| w * e.exp()).sum())
    }

    /// Log-hazard of subject `i` at arbitrary times in `[0, T_i]`.
    pub fn eta_hazard_at(&self, state: &State, i: usize, times: &[f64]) -> Result<Vec<f64>> {
        let mut per_subject = vec![Vec::new(); self.num_subjects];
        per_subject[i] = times.to_vec();
        let mut eta = vec![0.0; times.len()];
        let lambda = self.predictor_at(state, Predictor::Lambda, &per_subject)?;
        let gamma = self.predictor_at(state, Predictor::Gamma, &per_subject)?;
        for j in 0..times.len() {
            eta[j] = lambda[j] + gamma[j];
        }
        for kk in 0..self.num_markers {
            let a = self.predictor_at(state, Predictor::Alpha(kk), &per_subject)?;
            let mu = self.predictor_at(state, Predictor::Mu(kk), &per_subject)?;
            for j in 0..times.len() {
                eta[j] += a[j] * mu[j];
            }
        }
        Ok(eta)
    }

    /// Values of predictor `p` at arbitrary per-subject times.
    pub fn predictor_at(&self, state: &State, p: Predictor, times: &[Vec<f64>]) -> Result<Vec<f64>> {
        let rows: usize = times.iter().map(Vec::len).sum();
        let mut out = DVector::zeros(rows);
        for (b, block) in self.blocks.iter().enumerate() {
            if block.predictor != Some(p) {
                continue;
            }
            let parts = block
                .slots
                .iter()
                .map(|s| s.design.evaluate(&s.term, &self.data, times))
                .collect::<Result<Vec<_>>>()?;
            let mut x = hstack(&parts);
            if let Some(t) = &block.transform {
                x *= t;
            }
            out += x * &state.betas[b];
        }
        if let Predictor::Mu(kk) = p {
            let psi = psi_matrix(&self.basis, kk, times)?;
            let mut r = 0;
            for (i, ts) in times.iter().enumerate() {
                for _ in ts {
                    for (m, b) in self.score_blocks().enumerate() {
                        out[r] += psi[(r, m)] * state.betas[b][i];
                    }
                    r += 1;
                }
            }
        }
        Ok(out.iter().copied().collect())
    }

    /// Indices of the score blocks in component order.
    pub fn score_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().enumerate().filter(|(_, b)| matches!(b.kind, BlockKind::Score { .. })).map(|(i, _)| i)
    }
}

/// `rows × M` matrix of `ψ^(k)` at per-subject times (subject-major).
fn psi_matrix(basis: &MfpcBasis, k: usize, times: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = basis.num_components();
    let rows: usize = times.iter().map(Vec::len).sum();
    let mut out = DMatrix::zeros(rows, m);
    let mut r = 0;
    for ts in times {
        for &t in ts {
            for (j, v) in basis.eval(k, t)?.into_iter().enumerate() {
                out[(r, j)] = v;
            }
            r += 1;
        }
    }
    Ok(out)
}

/// `log N(x | mean, P⁻¹)` up to the constant `−d/2 log 2π`.
pub(crate) fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, chol_l: &DMatrix<f64>) -> f64 {
    let diff = x - mean;
    let z = chol_l.transpose() * &diff;
    let logdet: f64 = chol_l.diagonal().iter().map(|v| v.ln()).sum();
    logdet - 0.5 * z.dot(&z)
}

impl JointModel {
    /// Designs of predictor `p` in the original parameterisation, one per
    /// coefficient block of `p`, at per-subject times.
    pub fn original_designs(&self, p: Predictor, times: &[Vec<f64>]) -> Result<Vec<(usize, DMatrix<f64>)>> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.predictor == Some(p))
            .map(|(b, block)| {
                let parts = block
                    .slots
                    .iter()
                    .map(|s| s.design.evaluate(&s.term, &self.data, times))
                    .collect::<Result<Vec<_>>>()?;
                Ok((b, hstack(&parts)))
            })
            .collect()
    }

    /// `ψ^(k)` at per-subject times (`rows × M`).
    pub fn psi_at(&self, k: usize, times: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        psi_matrix(&self.basis, k, times)
    }
}
