//! ℓ1-penalized modular regression, structure-learned cross-terms and the
//! ridge-projection shortcut.

mod lasso;
mod projection;
mod structure;

pub use lasso::{lasso, modular_lasso};
pub(crate) use lasso::fit_from_path;
pub use projection::{
    cv_projection_etas, projection_shortcut, transformed_response, ProjectionOperator,
    ProjectionSource,
};
pub use structure::{
    learn_structure, learn_structure_honest, proxy_cross_term_struct, structure_penalty,
    StructureMode,
};
