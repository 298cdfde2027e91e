use nalgebra::{DMatrix, DVector};

use crate::data::{split_folds, Dataset};
use crate::error::{Error, Result};
use crate::learners::{column_scales, cv_l1_path, LassoPath, PenaltyConfig, RowwiseProblem};
use crate::linalg::gram;
use crate::modular::{
    proxy_cross_term_identity, CrossTermKind, EstimatorTag, ModularFit, ProxyCrossTerm,
};

/// `½θᵀGθ − cᵀθ + λ Σ_j s_j |θ_j|` with `s_j` the penalty scale of column `j`.
pub(crate) fn penalized_objective(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    lambda: f64,
    standardize: bool,
    theta: &DVector<f64>,
) -> f64 {
    let s = column_scales(g, standardize);
    let penalty: f64 = theta.iter().zip(s.iter()).map(|(t, s)| (t * s).abs()).sum();
    0.5 * theta.dot(&(g * theta)) - c.dot(theta) + lambda * penalty
}

pub(crate) fn fit_from_path(
    path: LassoPath,
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    config: &PenaltyConfig,
    tag: EstimatorTag,
    n: usize,
) -> ModularFit {
    let theta = path.chosen_coefficients().clone();
    let lambda = path.chosen_lambda();
    let objective = penalized_objective(g, c, lambda, config.standardize, &theta);
    let mut fit = ModularFit::new(theta, tag, n, objective);
    fit.lambda = Some(lambda);
    fit.path = Some(path);
    fit
}

/// ℓ1-penalized modular regression: `min ½θᵀGθ − Ĉᵀθ + λ‖θ‖₁` with `λ`
/// chosen by K-fold cross-validation on held-out `(Y − Xθ)²`. Training-fold
/// linear terms average the per-row contributions of `c`.
pub fn modular_lasso(
    d: &Dataset,
    c: &ProxyCrossTerm,
    config: &PenaltyConfig,
    seed: u64,
) -> Result<ModularFit> {
    let x = d.x()?;
    let y = d.y()?;
    let rows = c.per_row()?;
    if rows.shape() != x.shape() {
        return Err(Error::shape("cross-term contributions do not match x"));
    }
    let n = d.n();
    if n < config.cv_folds {
        return Err(Error::invalid(format!("{n} rows cannot fill {} folds", config.cv_folds)));
    }
    let folds = split_folds(n, config.cv_folds, seed)?;
    let problem = RowwiseProblem::new(x, rows, y, folds)?;
    let path = cv_l1_path(&problem, config)?;
    let tag = if c.kind == CrossTermKind::Identity {
        EstimatorTag::Lasso
    } else {
        EstimatorTag::ModLasso
    };
    let mut fit = fit_from_path(path, &gram(x), &c.c_hat, config, tag, n);
    fit.partition = c.partition.clone();
    Ok(fit)
}

/// The Lasso, as the identity-kind modular Lasso.
pub fn lasso(d: &Dataset, config: &PenaltyConfig, seed: u64) -> Result<ModularFit> {
    modular_lasso(d, &proxy_cross_term_identity(d)?, config, seed)
}
