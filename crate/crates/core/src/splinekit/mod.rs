//! B-spline bases, difference penalties, centering and the design matrices
//! of structured additive terms.

mod bspline;
mod design;
mod penalty;

pub use bspline::{eval_bspline_basis, SplineBasisDef};
pub use design::{
    assemble_predictor_design, mfpc_random_effect_design, stacked_mfpc_design, term_design, TermDesign, TermLabel,
};
pub use penalty::{center_design, difference_penalty, Centering};
