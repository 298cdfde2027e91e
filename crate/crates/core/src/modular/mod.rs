//! Cross-fitted proxy cross-terms and the low-dimensional modular
//! estimators built on them.

mod cross_term;
mod crossfit;
mod fit;
mod glm;
mod ols;

pub use cross_term::{
    proxy_cross_term_identity, proxy_cross_term_lm, CrossTermKind, ProxyCrossTerm,
    StructurePartition,
};
pub use crossfit::{
    crossfit_columns, crossfit_means, crossfit_means_on, CrossFitPredictions, PredictionSource,
};
pub use fit::{EstimatorTag, ModularFit};
pub use glm::{modular_glm, modular_glm_with, GlmFamily, NewtonSettings};
pub use ols::{influence_covariance, modular_ols, ols, InfluenceKind};
