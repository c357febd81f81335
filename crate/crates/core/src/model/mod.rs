//! Design matrices, pooled regression and mixed-effects maximum likelihood.

mod data;
mod fixed;
mod linalg;
mod mixed;
mod spec;

pub use fixed::{fit_fixed, FittedFixedModel};
pub use mixed::{beta_score, blup, fit_mixed, loglik, EmOptions, FittedMixedModel, MODEL_SCHEMA_VERSION};
pub use spec::{design_row, Basis, ModelSpec, Term};
