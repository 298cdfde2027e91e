//! Modular regression: least squares, GLMs and the Lasso with the sample
//! cross-term `(1/n) Σ X_i Y_i` replaced by a proxy `Ĉ` built from
//! cross-fitted conditional means given auxiliary variables `Z`.

pub mod data;
pub mod error;
pub mod fusion;
pub mod highdim;
pub mod learners;
pub mod linalg;
pub mod modular;
pub mod rng;
pub mod sim;

pub use nalgebra::{DMatrix, DVector};

pub use data::{
    load_csv, load_fusion, split_folds, standardize, Dataset, FoldAssignment, FusionDataset, Role,
    Schema,
};
pub use error::{Error, Result};
pub use fusion::{
    assemble_fusion_cross_term, fusion_fit, proxy_cross_term_miss, proxy_cross_term_part,
    proxy_cross_term_part_struct, FusionPredictions,
};
pub use highdim::{
    cv_projection_etas, lasso, learn_structure, learn_structure_honest, modular_lasso,
    projection_shortcut, proxy_cross_term_struct, structure_penalty, ProjectionOperator,
    StructureMode,
};
pub use learners::{
    solve_l1_quadratic, CvRule, LassoCv, LassoPath, Learner, MeanLearner, Model, Ols, PenaltyConfig,
    Ridge, RidgeCv,
};
pub use modular::{
    crossfit_means, influence_covariance, modular_glm, modular_ols, ols, proxy_cross_term_identity,
    proxy_cross_term_lm, CrossFitPredictions, CrossTermKind, EstimatorTag, GlmFamily, InfluenceKind,
    ModularFit, ProxyCrossTerm, StructurePartition,
};
pub use sim::{generate, numeric_theta_star, run_study, EstimatorSpec, Plugin, Setting, SimConfig, SimResult};
