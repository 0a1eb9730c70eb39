//! Declarative description of the additive predictors of a joint model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureConfig;

/// Name of the time variable in term definitions.
pub const TIME: &str = "t";

/// Name of the log-time variable (e.g. for Weibull-type baselines); only
/// defined at positive times.
pub const LOG_TIME: &str = "log(t)";

/// Whether `variable` names a function of time.
pub fn is_time_variable(variable: &str) -> bool {
    variable == TIME || variable == LOG_TIME
}

/// Label of an additive predictor. Marker indices are zero-based internally
/// and one-based in their string form (`"mu1"` is `Mu(0)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Predictor {
    Lambda,
    Gamma,
    Alpha(usize),
    Mu(usize),
    Sigma(usize),
}

impl Predictor {
    /// Whether the predictor enters the survival submodel.
    pub fn is_survival(&self) -> bool {
        matches!(self, Predictor::Lambda | Predictor::Gamma | Predictor::Alpha(_))
    }

    pub fn marker(&self) -> Option<usize> {
        match self {
            Predictor::Alpha(k) | Predictor::Mu(k) | Predictor::Sigma(k) => Some(*k),
            _ => None,
        }
    }

    /// All labels for `k` markers, in a fixed order.
    pub fn all(k: usize) -> Vec<Predictor> {
        let mut out = vec![Predictor::Lambda, Predictor::Gamma];
        out.extend((0..k).map(Predictor::Alpha));
        out.extend((0..k).map(Predictor::Mu));
        out.extend((0..k).map(Predictor::Sigma));
        out
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predictor::Lambda => write!(f, "lambda"),
            Predictor::Gamma => write!(f, "gamma"),
            Predictor::Alpha(k) => write!(f, "alpha{}", k + 1),
            Predictor::Mu(k) => write!(f, "mu{}", k + 1),
            Predictor::Sigma(k) => write!(f, "sigma{}", k + 1),
        }
    }
}

impl FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => return Ok(Predictor::Lambda),
            "gamma" => return Ok(Predictor::Gamma),
            _ => {}
        }
        for (prefix, make) in
            [("alpha", Predictor::Alpha as fn(usize) -> Predictor), ("mu", Predictor::Mu), ("sigma", Predictor::Sigma)]
        {
            if let Some(rest) = s.strip_prefix(prefix) {
                if let Ok(k) = rest.parse::<usize>() {
                    if k >= 1 {
                        return Ok(make(k - 1));
                    }
                }
            }
        }
        Err(Error::Config(format!("unknown predictor label '{s}'")))
    }
}

impl TryFrom<String> for Predictor {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Predictor> for String {
    fn from(p: Predictor) -> String {
        p.to_string()
    }
}

/// Hyperprior of a term variance `τ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariancePrior {
    InverseGamma { a: f64, b: f64 },
    HalfCauchy { scale: f64 },
    Fixed { value: f64 },
}

impl Default for VariancePrior {
    fn default() -> Self {
        VariancePrior::InverseGamma { a: 0.001, b: 0.001 }
    }
}

fn default_num_basis() -> usize {
    20
}
fn default_degree() -> usize {
    3
}
fn default_penalty_order() -> usize {
    3
}
fn default_true() -> bool {
    true
}

/// Penalised B-spline term of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub variable: String,
    #[serde(default = "default_num_basis")]
    pub num_basis: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_penalty_order")]
    pub penalty_order: usize,
    /// Basis domain; defaults to `[0, max follow-up]` for time and to the
    /// observed range for covariates.
    #[serde(default)]
    pub domain: Option<[f64; 2]>,
    #[serde(default = "default_true")]
    pub center: bool,
    #[serde(default)]
    pub prior: VariancePrior,
}

impl SmoothTerm {
    pub fn new(variable: &str, num_basis: usize, degree: usize, penalty_order: usize) -> Self {
        Self {
            variable: variable.to_string(),
            num_basis,
            degree,
            penalty_order,
            domain: None,
            center: true,
            prior: VariancePrior::default(),
        }
    }
}

/// One additive term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Term {
    Intercept,
    /// Product of the listed variables (`"t"` denotes time).
    Linear {
        covariates: Vec<String>,
    },
    Smooth(SmoothTerm),
    /// Subject-specific random effects in the multivariate functional
    /// principal component basis.
    Mfpc,
}

impl Term {
    pub fn linear(covariates: &[&str]) -> Self {
        Term::Linear { covariates: covariates.iter().map(|s| s.to_string()).collect() }
    }

    /// Whether the term is evaluated with a fixed, flat-ish Gaussian prior.
    pub fn is_parametric(&self) -> bool {
        matches!(self, Term::Intercept | Term::Linear { .. })
    }

    fn uses_time(&self) -> bool {
        match self {
            Term::Linear { covariates } => covariates.iter().any(|c| is_time_variable(c)),
            Term::Smooth(s) => is_time_variable(&s.variable),
            Term::Mfpc => true,
            Term::Intercept => false,
        }
    }
}

fn default_prior_sd() -> f64 {
    1000.0
}

/// Full model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_markers: usize,
    pub predictors: BTreeMap<Predictor, Vec<Term>>,
    /// Standard deviation of the Gaussian prior on parametric coefficients.
    #[serde(default = "default_prior_sd")]
    pub fixed_prior_sd: f64,
    /// Hyperprior of the score variances `τ²_(m)`.
    #[serde(default)]
    pub mfpc_prior: VariancePrior,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default = "default_true")]
    pub standardize_survival: bool,
}

impl ModelSpec {
    /// Smooth baseline hazard, intercepts elsewhere and functional random
    /// effects in every longitudinal mean.
    pub fn default_for(num_markers: usize) -> Self {
        let mut predictors = BTreeMap::new();
        for p in Predictor::all(num_markers) {
            let terms = match p {
                Predictor::Lambda => vec![Term::Smooth(SmoothTerm::new(TIME, 20, 3, 3))],
                Predictor::Mu(_) => vec![Term::Intercept, Term::Mfpc],
                _ => vec![Term::Intercept],
            };
            predictors.insert(p, terms);
        }
        Self {
            num_markers,
            predictors,
            fixed_prior_sd: default_prior_sd(),
            mfpc_prior: VariancePrior::default(),
            quadrature: QuadratureConfig::default(),
            standardize_survival: true,
        }
    }

    /// Replaces the terms of one predictor.
    pub fn with_terms(mut self, p: Predictor, terms: Vec<Term>) -> Self {
        self.predictors.insert(p, terms);
        self
    }

    pub fn terms(&self, p: Predictor) -> &[Term] {
        self.predictors.get(&p).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_markers == 0 {
            return Err(Error::Config("model needs at least one marker".into()));
        }
        for p in self.predictors.keys() {
            if let Some(k) = p.marker() {
                if k >= self.num_markers {
                    return Err(Error::Config(format!(
                        "predictor {p} refers to a marker beyond the {} declared",
                        self.num_markers
                    )));
                }
            }
        }
        for p in Predictor::all(self.num_markers) {
            let terms =
                self.predictors.get(&p).ok_or_else(|| Error::Config(format!("predictor {p} has no term list")))?;
            let n_mfpc = terms.iter().filter(|t| matches!(t, Term::Mfpc)).count();
            match p {
                Predictor::Mu(_) if n_mfpc != 1 => {
                    return Err(Error::Config(format!(
                        "predictor {p} must contain exactly one MFPC random-effect term"
                    )))
                }
                Predictor::Mu(_) => {}
                _ if n_mfpc > 0 => {
                    return Err(Error::Config(format!(
                        "MFPC random effects are only allowed in longitudinal means, found in {p}"
                    )))
                }
                _ => {}
            }
            if p == Predictor::Gamma && terms.iter().any(Term::uses_time) {
                return Err(Error::Config("gamma must not depend on time".into()));
            }
            if p == Predictor::Lambda && terms.iter().any(|t| matches!(t, Term::Intercept)) {
                return Err(Error::Config(
                    "lambda must not contain an intercept; the hazard intercept lives in gamma".into(),
                ));
            }
            for t in terms {
                match t {
                    Term::Linear { covariates } if covariates.is_empty() => {
                        return Err(Error::Config(format!("linear term in {p} lists no covariates")))
                    }
                    Term::Smooth(s) => {
                        crate::splinekit::SplineBasisDef {
                            degree: s.degree,
                            num_basis: s.num_basis,
                            domain: (0.0, 1.0),
                            penalty_order: s.penalty_order,
                        }
                        .validate()?;
                    }
                    _ => {}
                }
            }
        }
        if !(self.fixed_prior_sd > 0.0 && self.fixed_prior_sd.is_finite()) {
            return Err(Error::Config("fixed_prior_sd must be positive".into()));
        }
        Ok(())
    }
}
