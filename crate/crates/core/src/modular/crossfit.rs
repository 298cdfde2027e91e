use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::learners::Learner;
use crate::linalg::{all_finite, select_rows};

/// Where the conditional-mean predictions came from.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictionSource {
    /// Row `i` was predicted by models fitted without fold `plan.fold_of(i)`.
    CrossFit { plan: FoldAssignment },
    /// Known conditional means supplied by the caller.
    Oracle,
    /// `μ̂_x(Z_i) = X_i` and `μ̂_y(Z_i) = Y_i`.
    Identity,
}

/// Out-of-fold predictions of `E[X | Z]` (one column per covariate) and
/// `E[Y | Z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossFitPredictions {
    pub mu_x: DMatrix<f64>,
    pub mu_y: DVector<f64>,
    pub source: PredictionSource,
}

impl CrossFitPredictions {
    pub fn oracle(mu_x: DMatrix<f64>, mu_y: DVector<f64>) -> Result<Self> {
        if mu_x.nrows() != mu_y.len() {
            return Err(Error::shape(format!(
                "mu_x has {} rows, mu_y has {}",
                mu_x.nrows(),
                mu_y.len()
            )));
        }
        if !all_finite(mu_x.iter()) || !all_finite(mu_y.iter()) {
            return Err(Error::NonFinite("conditional-mean predictions".into()));
        }
        Ok(Self {
            mu_x,
            mu_y,
            source: PredictionSource::Oracle,
        })
    }

    pub fn identity(d: &Dataset) -> Result<Self> {
        Ok(Self {
            mu_x: d.x()?.clone(),
            mu_y: d.y()?.clone(),
            source: PredictionSource::Identity,
        })
    }

    pub fn n(&self) -> usize {
        self.mu_y.len()
    }

    /// Fold whose model produced row `i`, when cross-fitted.
    pub fn excluded_fold(&self, i: usize) -> Option<usize> {
        match &self.source {
            PredictionSource::CrossFit { plan } => Some(plan.fold_of(i)),
            _ => None,
        }
    }
}

fn target_name(names: &[String], prefix: &str, j: usize) -> String {
    names.get(j).cloned().unwrap_or_else(|| format!("{prefix}{}", j + 1))
}

fn relabel(err: Error, fold: usize, names: &[String], prefix: &str) -> Error {
    match err {
        Error::Learner { target, source, .. } => {
            let j = target
                .strip_prefix("column ")
                .and_then(|s| s.parse::<usize>().ok())
                .map_or(0, |c| c - 1);
            Error::Learner {
                fold: fold + 1,
                target: target_name(names, prefix, j),
                source,
            }
        }
        other => Error::Learner {
            fold: fold + 1,
            target: prefix.to_string(),
            source: Box::new(other),
        },
    }
}

/// Out-of-fold predictions of every column of `targets` from `features`.
/// Fold models are fitted concurrently and assembled in fold order. Errors
/// name the 1-based fold and the target column.
pub fn crossfit_columns(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    learner: &dyn Learner,
    folds: &FoldAssignment,
    target_names: &[String],
    prefix: &str,
) -> Result<DMatrix<f64>> {
    let n = features.nrows();
    if targets.nrows() != n || folds.n() != n {
        return Err(Error::shape(format!(
            "{n} feature rows, {} target rows, {} fold labels",
            targets.nrows(),
            folds.n()
        )));
    }
    let per_fold: Vec<(Vec<usize>, DMatrix<f64>)> = (0..folds.k())
        .into_par_iter()
        .map(|fold| {
            let train = folds.train_rows(fold);
            let test = folds.test_rows(fold);
            if train.is_empty() {
                return Err(Error::invalid(format!("fold {} has no training rows", fold + 1)));
            }
            let models = learner
                .fit_columns(&select_rows(features, &train), &select_rows(targets, &train))
                .map_err(|e| relabel(e, fold, target_names, prefix))?;
            let f_te = select_rows(features, &test);
            let mut pred = DMatrix::zeros(test.len(), targets.ncols());
            for (j, m) in models.iter().enumerate() {
                pred.set_column(j, &m.predict(&f_te));
            }
            if !all_finite(pred.iter()) {
                return Err(Error::Learner {
                    fold: fold + 1,
                    target: prefix.to_string(),
                    source: Box::new(Error::NonFinite("predictions".into())),
                });
            }
            Ok((test, pred))
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(n, targets.ncols());
    for (rows, pred) in per_fold {
        for (r, &i) in rows.iter().enumerate() {
            out.set_row(i, &pred.row(r));
        }
    }
    Ok(out)
}

/// Cross-fitted `μ̂_x` and `μ̂_y` on features `Z`.
pub fn crossfit_means(
    d: &Dataset,
    learner_x: &dyn Learner,
    learner_y: &dyn Learner,
    folds: &FoldAssignment,
) -> Result<CrossFitPredictions> {
    crossfit_means_on(d.z()?, d, learner_x, learner_y, folds)
}

/// As [`crossfit_means`] with an explicit feature matrix in place of `Z`.
pub fn crossfit_means_on(
    features: &DMatrix<f64>,
    d: &Dataset,
    learner_x: &dyn Learner,
    learner_y: &dyn Learner,
    folds: &FoldAssignment,
) -> Result<CrossFitPredictions> {
    if features.ncols() == 0 {
        return Err(Error::invalid("cross-fitting needs at least one feature"));
    }
    let x = d.x()?;
    let y = d.y()?;
    let mu_x = crossfit_columns(features, x, learner_x, folds, &d.names().x, "x")?;
    let y_mat = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let mu_y = crossfit_columns(features, &y_mat, learner_y, folds, &[], "y")?;
    Ok(CrossFitPredictions {
        mu_x,
        mu_y: mu_y.column(0).into_owned(),
        source: PredictionSource::CrossFit { plan: folds.clone() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_folds;
    use crate::learners::{MeanLearner, Ols};

    #[test]
    fn constant_learner_gives_out_of_fold_mean() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, 0.0]);
        let z = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 10.0]);
        let d = Dataset::triples(x, z, y.clone()).unwrap();
        let folds = split_folds(4, 2, 0).unwrap();
        let p = crossfit_means(&d, &MeanLearner, &MeanLearner, &folds).unwrap();
        for i in 0..4 {
            let k = p.excluded_fold(i).unwrap();
            let train = folds.train_rows(k);
            let m = train.iter().map(|&r| y[r]).sum::<f64>() / train.len() as f64;
            assert_eq!(p.mu_y[i], m);
            assert!(!train.contains(&i));
        }
    }

    #[test]
    fn noiseless_linear_subtask_is_reproduced() {
        let z = DMatrix::from_fn(20, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let x = DMatrix::from_fn(20, 2, |i, j| 2.0 * z[(i, 0)] - z[(i, 1)] + j as f64);
        let y = DVector::from_fn(20, |i, _| z[(i, 1)]);
        let d = Dataset::triples(x.clone(), z, y).unwrap();
        let folds = split_folds(20, 2, 3).unwrap();
        let ols = Ols { intercept: true };
        let p = crossfit_means(&d, &ols, &ols, &folds).unwrap();
        assert!((p.mu_x - x).amax() < 1e-8);
    }

    #[test]
    fn learner_failure_names_fold_and_target() {
        let z = DMatrix::from_element(6, 1, 0.0);
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64);
        let y = DVector::from_fn(6, |i, _| i as f64);
        let d = Dataset::triples(x, z, y).unwrap();
        let folds = split_folds(6, 2, 0).unwrap();
        let err = crossfit_means(&d, &Ols { intercept: false }, &MeanLearner, &folds).unwrap_err();
        match err {
            Error::Learner { fold, target, .. } => {
                assert!(fold == 1 || fold == 2);
                assert_eq!(target, "x1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
