//! Flexible Bayesian joint models for multivariate longitudinal and
//! time-to-event data, with random effects expressed in a multivariate
//! functional principal component basis.

pub mod data;
pub mod error;
pub mod evalkit;
pub mod fpca;
pub mod jointmodel;
pub mod linalg;
pub mod quadrature;
pub mod simgen;
pub mod splinekit;
pub mod study;

pub use data::{LongSurvDataset, Observation, Subject};
pub use error::{Error, Result};
