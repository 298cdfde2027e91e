//! Ridge regression with the penalty chosen by K-fold cross-validation.

use nalgebra::{DMatrix, DVector};

use super::{select_index, CvRule, Learner, LinearModel, Model};
use crate::data::split_folds;
use crate::error::{Error, Result};
use crate::linalg::{column_means, select_rows};

/// Cross-validated ridge. Features are centered and scaled internally; the
/// penalty on the scaled problem is `η = λ · n_train` for `λ` on a
/// log-spaced grid. One SVD per fold is shared by every target column.
#[derive(Clone, Debug)]
pub struct RidgeCv {
    pub n_lambda: usize,
    /// `log10` range of the `λ` grid.
    pub log10_range: (f64, f64),
    pub cv_folds: usize,
    pub cv_rule: CvRule,
    pub seed: u64,
}

impl Default for RidgeCv {
    fn default() -> Self {
        Self {
            n_lambda: 30,
            log10_range: (3.0, -4.0),
            cv_folds: 10,
            cv_rule: CvRule::Min,
            seed: 0,
        }
    }
}

struct Scaled {
    means: DVector<f64>,
    scales: DVector<f64>,
    u_t_targets: DMatrix<f64>,
    target_means: DVector<f64>,
    v: DMatrix<f64>,
    sing: DVector<f64>,
}

impl Scaled {
    fn fit(features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Self> {
        let n = features.nrows() as f64;
        let means = column_means(features);
        let mut f = features.clone();
        let mut scales = DVector::from_element(f.ncols(), 1.0);
        for (j, mut col) in f.column_iter_mut().enumerate() {
            col.add_scalar_mut(-means[j]);
            let sd = (col.norm_squared() / n).sqrt();
            if sd > 0.0 {
                col /= sd;
                scales[j] = sd;
            }
        }
        let target_means = column_means(targets);
        let mut t = targets.clone();
        for (j, mut col) in t.column_iter_mut().enumerate() {
            col.add_scalar_mut(-target_means[j]);
        }
        let svd = f.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::invalid("ridge SVD did not produce singular vectors")),
        };
        Ok(Self {
            means,
            scales,
            u_t_targets: u.tr_mul(&t),
            target_means,
            v: v_t.transpose(),
            sing: svd.singular_values,
        })
    }

    /// Coefficients on the scaled features for column `col` at penalty `eta`.
    fn coef(&self, col: usize, eta: f64) -> DVector<f64> {
        let w = DVector::from_fn(self.sing.len(), |k, _| {
            let s = self.sing[k];
            let d = s * s + eta;
            if d > 0.0 {
                s / d * self.u_t_targets[(k, col)]
            } else {
                0.0
            }
        });
        &self.v * w
    }

    fn scale_features(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(features.nrows(), features.ncols(), |i, j| {
            (features[(i, j)] - self.means[j]) / self.scales[j]
        })
    }

    fn model(&self, col: usize, eta: f64) -> LinearModel {
        let coef = self.coef(col, eta).component_div(&self.scales);
        LinearModel {
            intercept: self.target_means[col] - self.means.dot(&coef),
            coef,
        }
    }
}

impl RidgeCv {
    pub fn lambdas(&self) -> Vec<f64> {
        let (hi, lo) = self.log10_range;
        let m = self.n_lambda.max(1);
        (0..m)
            .map(|k| {
                let t = if m == 1 { hi } else { hi + (lo - hi) * k as f64 / (m - 1) as f64 };
                10f64.powf(t)
            })
            .collect()
    }
}

impl Learner for RidgeCv {
    fn name(&self) -> String {
        "ridge-cv".into()
    }

    fn fit(&self, features: &DMatrix<f64>, targets: &DVector<f64>) -> Result<Box<dyn Model>> {
        let t = DMatrix::from_column_slice(targets.len(), 1, targets.as_slice());
        Ok(self.fit_columns(features, &t)?.pop().expect("one column"))
    }

    fn fit_columns(&self, features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Vec<Box<dyn Model>>> {
        let n = features.nrows();
        if targets.nrows() != n {
            return Err(Error::shape(format!("{n} feature rows, {} target rows", targets.nrows())));
        }
        let k = self.cv_folds.min(n);
        if k < 2 {
            return Err(Error::invalid(format!("ridge cross-validation needs 2 rows, got {n}")));
        }
        let folds = split_folds(n, k, self.seed)?;
        let lambdas = self.lambdas();
        let m = targets.ncols();
        // fold_err[fold][l * m + col]
        let mut fold_err = vec![vec![0.0; lambdas.len() * m]; k];
        for (fold, errs) in fold_err.iter_mut().enumerate() {
            let train = folds.train_rows(fold);
            let test = folds.test_rows(fold);
            let fit = Scaled::fit(&select_rows(features, &train), &select_rows(targets, &train))?;
            let a = fit.scale_features(&select_rows(features, &test)) * &fit.v;
            let t_te = select_rows(targets, &test);
            for (l, &lambda) in lambdas.iter().enumerate() {
                let eta = lambda * train.len() as f64;
                let shrink = DVector::from_fn(fit.sing.len(), |q, _| {
                    let s = fit.sing[q];
                    let d = s * s + eta;
                    if d > 0.0 { s / d } else { 0.0 }
                });
                let w = DMatrix::from_fn(fit.sing.len(), m, |q, c| shrink[q] * fit.u_t_targets[(q, c)]);
                let pred = &a * w;
                for c in 0..m {
                    let mut acc = 0.0;
                    for r in 0..test.len() {
                        let e = t_te[(r, c)] - pred[(r, c)] - fit.target_means[c];
                        acc += e * e;
                    }
                    errs[l * m + c] = acc / test.len() as f64;
                }
            }
        }
        let full = Scaled::fit(features, targets)?;
        let mut models: Vec<Box<dyn Model>> = Vec::with_capacity(m);
        for c in 0..m {
            let mut mean = vec![0.0; lambdas.len()];
            let mut se = vec![0.0; lambdas.len()];
            for l in 0..lambdas.len() {
                let vals: Vec<f64> = fold_err.iter().map(|e| e[l * m + c]).collect();
                let mu = vals.iter().sum::<f64>() / k as f64;
                let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1) as f64;
                mean[l] = mu;
                se[l] = (var / k as f64).sqrt();
            }
            let chosen = select_index(&mean, &se, self.cv_rule);
            models.push(Box::new(full.model(c, lambdas[chosen] * n as f64)));
        }
        Ok(models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::fit_ridge;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn scaled_fit_matches_direct_ridge_on_standardized_features() {
        let mut r = rng::stream(5, 0);
        let x = DMatrix::from_fn(40, 3, |_, _| StandardNormal.sample(&mut r));
        let y = DVector::from_fn(40, |i, _| x[(i, 0)] - x[(i, 2)] + 2.0);
        let t = DMatrix::from_column_slice(40, 1, y.as_slice());
        let s = Scaled::fit(&x, &t).unwrap();
        let xs = s.scale_features(&x);
        let yc = y.add_scalar(-y.mean());
        let direct = fit_ridge(&xs, &yc, 3.0).unwrap();
        assert!((s.coef(0, 3.0) - direct.coef).amax() < 1e-10);
    }

    #[test]
    fn recovers_linear_map_with_light_noise() {
        let mut r = rng::stream(6, 0);
        let x = DMatrix::from_fn(200, 5, |_, _| StandardNormal.sample(&mut r));
        let mut t = DMatrix::zeros(200, 2);
        for i in 0..200 {
            let e: f64 = StandardNormal.sample(&mut r);
            t[(i, 0)] = 1.0 + x[(i, 1)] + 0.05 * e;
            t[(i, 1)] = -2.0 * x[(i, 3)];
        }
        let models = RidgeCv::default().fit_columns(&x, &t).unwrap();
        for (c, m) in models.iter().enumerate() {
            let err = (m.predict(&x) - t.column(c)).amax();
            assert!(err < 0.3, "column {c}: {err}");
        }
    }
}
