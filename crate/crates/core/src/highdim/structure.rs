use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{split_folds, Dataset, FoldAssignment};
use crate::error::Result;
use crate::learners::{cv_lambda_path, CvRule, Learner, PenaltyConfig};
use crate::linalg::{column_means, hstack, select_columns};
use crate::modular::{crossfit_columns, CrossTermKind, ProxyCrossTerm, StructurePartition};
use crate::rng;

/// Default penalty settings for structure learning: the 1se rule.
pub fn structure_penalty() -> PenaltyConfig {
    PenaltyConfig::default().with_rule(CvRule::OneSe)
}

/// Lasso of `Y` on `(X, Z)` with an unpenalized intercept; `J₂` holds the
/// covariates with a nonzero coefficient at the cross-validated `λ`.
pub fn learn_structure(d: &Dataset, config: &PenaltyConfig, seed: u64) -> Result<StructurePartition> {
    let x = d.x()?;
    let z = d.z()?;
    let y = d.y()?;
    let mut features = hstack(x, z);
    let means = column_means(&features);
    for (j, mut col) in features.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let yc = y.add_scalar(-y.mean());
    let path = cv_lambda_path(&features, &yc, config, seed)?;
    let coef = path.chosen_coefficients();
    let j2 = (0..x.ncols()).filter(|&j| coef[j] != 0.0).collect();
    StructurePartition::from_j2(x.ncols(), j2)
}

/// Learns the partition on one half of the rows and returns it together
/// with the other half, which should be used for estimation.
pub fn learn_structure_honest(
    d: &Dataset,
    config: &PenaltyConfig,
    seed: u64,
) -> Result<(StructurePartition, Vec<usize>)> {
    let halves = split_folds(d.n(), 2, rng::derive_seed(seed, 0x5752))?;
    let learn = d.subset(&halves.test_rows(0))?;
    let partition = learn_structure(&learn, config, seed)?;
    Ok((partition, halves.test_rows(1)))
}

/// Feature set of the `μ̂_y` sub-task when some covariates are merged into
/// the conditioning set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureMode {
    /// `μ̂_y` and `μ̂_x` both condition on `Z^full = (Z, X_J₂)`.
    #[default]
    FullConditioning,
    /// `μ̂_y` conditions on `Z` only.
    ZOnlyForY,
}

/// Robust cross-term. Coordinates in `J₁` use the three-term form with
/// conditional means on `Z^full = (Z, X_J₂)`; coordinates in `J₂` use
/// `X_ij Y_i`.
pub fn proxy_cross_term_struct(
    d: &Dataset,
    partition: &StructurePartition,
    learner_x: &dyn Learner,
    learner_y: &dyn Learner,
    folds: &FoldAssignment,
    mode: StructureMode,
) -> Result<ProxyCrossTerm> {
    let x = d.x()?;
    let z = d.z()?;
    let y = d.y()?;
    partition.validate(x.ncols())?;
    let n = d.n();
    let mut rows = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] * y[i]);
    if !partition.j1.is_empty() {
        let z_full = hstack(z, &select_columns(x, &partition.j2));
        let names: Vec<String> = partition.j1.iter().map(|&j| d.names().x[j].clone()).collect();
        let mu_x = crossfit_columns(&z_full, &select_columns(x, &partition.j1), learner_x, folds, &names, "x")?;
        let y_features = match mode {
            StructureMode::FullConditioning => &z_full,
            StructureMode::ZOnlyForY => z,
        };
        let y_mat = DMatrix::from_column_slice(n, 1, y.as_slice());
        let mu_y: DVector<f64> = crossfit_columns(y_features, &y_mat, learner_y, folds, &[], "y")?
            .column(0)
            .into_owned();
        for (k, &j) in partition.j1.iter().enumerate() {
            for i in 0..n {
                rows[(i, j)] = x[(i, j)] * mu_y[i] + mu_x[(i, k)] * y[i] - mu_x[(i, k)] * mu_y[i];
            }
        }
    }
    let mut c = ProxyCrossTerm::from_rows(rows, CrossTermKind::Struct)?;
    c.partition = Some(partition.clone());
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{Ols, Ridge};
    use crate::modular::{crossfit_means, proxy_cross_term_identity, proxy_cross_term_lm};
    use rand_distr::{Distribution, StandardNormal};

    fn data(seed: u64) -> Dataset {
        let mut r = rng::stream(seed, 0);
        let mut g = || -> f64 { StandardNormal.sample(&mut r) };
        let x = DMatrix::from_fn(60, 4, |_, _| g());
        let z = DMatrix::from_fn(60, 3, |i, j| x[(i, j)] + g());
        let y = DVector::from_fn(60, |i, _| z[(i, 0)] + x[(i, 3)] + g());
        Dataset::triples(x, z, y).unwrap()
    }

    #[test]
    fn limits_interpolate_between_lm_and_identity() {
        let d = data(1);
        let folds = split_folds(60, 2, 4).unwrap();
        let l = Ridge { eta: 1.0, intercept: true };
        let none = StructurePartition::all_modular(4);
        let s = proxy_cross_term_struct(&d, &none, &l, &l, &folds, StructureMode::FullConditioning).unwrap();
        let lm = proxy_cross_term_lm(&d, &crossfit_means(&d, &l, &l, &folds).unwrap()).unwrap();
        assert_eq!(s.c_hat, lm.c_hat);

        let all = StructurePartition::from_j2(4, vec![0, 1, 2, 3]).unwrap();
        let s = proxy_cross_term_struct(&d, &all, &l, &l, &folds, StructureMode::FullConditioning).unwrap();
        assert_eq!(s.c_hat, proxy_cross_term_identity(&d).unwrap().c_hat);
    }

    #[test]
    fn full_shrinkage_gives_empty_j2() {
        let d = data(2);
        let cfg = structure_penalty().with_grid(vec![1e6]);
        let p = learn_structure(&d, &cfg, 1).unwrap();
        assert!(p.j2.is_empty());
        assert_eq!(p.j1, vec![0, 1, 2, 3]);
    }

    #[test]
    fn modes_differ_only_in_y_features() {
        let d = data(3);
        let folds = split_folds(60, 2, 4).unwrap();
        let part = StructurePartition::from_j2(4, vec![3]).unwrap();
        let ols = Ols { intercept: true };
        let a = proxy_cross_term_struct(&d, &part, &ols, &ols, &folds, StructureMode::FullConditioning).unwrap();
        let b = proxy_cross_term_struct(&d, &part, &ols, &ols, &folds, StructureMode::ZOnlyForY).unwrap();
        assert_eq!(a.c_hat[3], b.c_hat[3]);
        assert_ne!(a.c_hat[0], b.c_hat[0]);
    }

    #[test]
    fn honest_split_uses_disjoint_halves() {
        let d = data(4);
        let (_, est) = learn_structure_honest(&d, &structure_penalty().with_folds(5), 2).unwrap();
        assert_eq!(est.len(), 30);
    }
}
