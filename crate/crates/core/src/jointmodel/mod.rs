//! Bayesian joint model of multivariate longitudinal markers and a
//! time-to-event outcome.

mod derivatives;
pub mod fitted;
pub mod mode;
pub mod model;
pub mod sampler;
pub mod spec;

pub use fitted::{
    fit, quantile_sorted, summarize, BlockRecord, BlockSummary, FitOptions, FittedModel, ParameterSummary,
};
pub use mode::{ModeConfig, ModeResult};
pub use model::{standardize_survival_designs, Block, BlockKind, Etas, JointModel, Location, State};
pub use sampler::{slice_sample, Chain, ChainConfig};
pub use spec::{ModelSpec, Predictor, SmoothTerm, Term, VariancePrior, LOG_TIME, TIME};
