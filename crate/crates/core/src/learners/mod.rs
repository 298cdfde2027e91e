//! Conditional-mean learners for the sub-tasks `E[X | Z]` and `E[Y | Z]`,
//! and the penalized least-squares machinery they share with the
//! estimators.

mod cv;
mod l1;
mod ridge;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, column_means};

pub use cv::{
    cv_l1_path, cv_lambda_path, default_lambda_grid, lambda_max, select_index, CvProblem, LassoCv, LassoPath,
    RowwiseProblem,
};
pub use l1::{
    kkt_residual, l1_objective, soft_threshold, solve_l1_quadratic, CoordinateDescent, L1Solution,
};
pub use ridge::RidgeCv;
pub(crate) use cv::{column_scales, fmt_f64};

/// A fitted regression function.
pub trait Model: Send + Sync {
    fn predict(&self, features: &DMatrix<f64>) -> DVector<f64>;
}

/// A regression procedure. Fitting is a pure function of its inputs.
pub trait Learner: Send + Sync {
    fn name(&self) -> String;

    fn fit(&self, features: &DMatrix<f64>, targets: &DVector<f64>) -> Result<Box<dyn Model>>;

    /// One model per target column. Learners that can share work across
    /// targets on the same features override this.
    fn fit_columns(
        &self,
        features: &DMatrix<f64>,
        targets: &DMatrix<f64>,
    ) -> Result<Vec<Box<dyn Model>>> {
        (0..targets.ncols())
            .map(|j| {
                self.fit(features, &targets.column(j).into_owned())
                    .map_err(|e| Error::Learner {
                        fold: 0,
                        target: format!("column {}", j + 1),
                        source: Box::new(e),
                    })
            })
            .collect()
    }
}

/// Cross-validation selection rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvRule {
    /// Smallest mean CV error.
    #[default]
    #[serde(rename = "min")]
    Min,
    /// Largest penalty within one standard error of the minimum.
    #[serde(rename = "1se")]
    OneSe,
}

impl std::str::FromStr for CvRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(CvRule::Min),
            "1se" => Ok(CvRule::OneSe),
            other => Err(Error::invalid(format!("unknown cv rule `{other}`"))),
        }
    }
}

/// ℓ1 path and cross-validation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    /// Explicit λ grid, strictly decreasing and positive. When absent, a
    /// log-spaced grid from `λ_max = ‖c‖∞` down to
    /// `lambda_min_ratio · λ_max` is used.
    pub lambda_grid: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// ℓ2 strength for ridge smoothers built alongside this penalty.
    pub ridge_eta: f64,
    pub cv_folds: usize,
    pub cv_rule: CvRule,
    /// Penalize on the unit-second-moment scale of each column and report
    /// coefficients on the original scale.
    pub standardize: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            n_lambda: 100,
            lambda_min_ratio: 1e-3,
            ridge_eta: 0.0,
            cv_folds: 10,
            cv_rule: CvRule::Min,
            standardize: true,
        }
    }
}

impl PenaltyConfig {
    pub fn with_rule(mut self, rule: CvRule) -> Self {
        self.cv_rule = rule;
        self
    }

    pub fn with_folds(mut self, k: usize) -> Self {
        self.cv_folds = k;
        self
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.lambda_grid = Some(grid);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cv_folds < 2 {
            return Err(Error::invalid("cv_folds must be at least 2"));
        }
        if !(self.ridge_eta >= 0.0) {
            return Err(Error::invalid("ridge_eta must be nonnegative"));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return Err(Error::invalid("empty lambda grid"));
            }
            if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return Err(Error::invalid("lambda grid entries must be positive"));
            }
            if grid.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::invalid("lambda grid must be strictly decreasing"));
            }
        } else if self.n_lambda == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0)
        {
            return Err(Error::invalid("need n_lambda ≥ 1 and 0 < lambda_min_ratio < 1"));
        }
        Ok(())
    }
}

/// `features · coef + intercept`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub coef: DVector<f64>,
    pub intercept: f64,
}

impl Model for LinearModel {
    fn predict(&self, features: &DMatrix<f64>) -> DVector<f64> {
        let mut out = features * &self.coef;
        if self.intercept != 0.0 {
            out.add_scalar_mut(self.intercept);
        }
        out
    }
}

/// Least squares without intercept.
pub fn fit_ols(features: &DMatrix<f64>, targets: &DVector<f64>) -> Result<LinearModel> {
    fit_ridge(features, targets, 0.0)
}

/// Solves `(XᵀX + ηI) β = Xᵀy`. With `eta = 0` this is least squares.
pub fn fit_ridge(features: &DMatrix<f64>, targets: &DVector<f64>, eta: f64) -> Result<LinearModel> {
    if features.nrows() != targets.len() {
        return Err(Error::shape(format!(
            "{} feature rows, {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    if !(eta >= 0.0) {
        return Err(Error::invalid("ridge penalty must be nonnegative"));
    }
    if !linalg::all_finite(features.iter()) || !linalg::all_finite(targets.iter()) {
        return Err(Error::NonFinite("regression inputs".into()));
    }
    let mut g = features.tr_mul(features);
    for i in 0..g.nrows() {
        g[(i, i)] += eta;
    }
    let coef = linalg::spd_solve(&g, &features.tr_mul(targets))?;
    Ok(LinearModel {
        coef,
        intercept: 0.0,
    })
}

fn centered(features: &DMatrix<f64>, targets: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
    let means = column_means(features);
    let ybar = targets.mean();
    let mut fc = features.clone();
    for (j, mut col) in fc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let yc = targets.add_scalar(-ybar);
    (fc, yc, means, ybar)
}

fn with_intercept(
    features: &DMatrix<f64>,
    targets: &DVector<f64>,
    fit: impl Fn(&DMatrix<f64>, &DVector<f64>) -> Result<LinearModel>,
) -> Result<LinearModel> {
    let (fc, yc, means, ybar) = centered(features, targets);
    let mut m = fit(&fc, &yc)?;
    m.intercept = ybar - means.dot(&m.coef);
    Ok(m)
}

/// Least-squares learner.
#[derive(Clone, Debug, Default)]
pub struct Ols {
    pub intercept: bool,
}

impl Learner for Ols {
    fn name(&self) -> String {
        "linear".into()
    }

    fn fit(&self, features: &DMatrix<f64>, targets: &DVector<f64>) -> Result<Box<dyn Model>> {
        let m = if self.intercept {
            with_intercept(features, targets, fit_ols)?
        } else {
            fit_ols(features, targets)?
        };
        Ok(Box::new(m))
    }
}

/// Ridge learner with a fixed penalty.
#[derive(Clone, Debug, Default)]
pub struct Ridge {
    pub eta: f64,
    pub intercept: bool,
}

impl Learner for Ridge {
    fn name(&self) -> String {
        format!("ridge({})", self.eta)
    }

    fn fit(&self, features: &DMatrix<f64>, targets: &DVector<f64>) -> Result<Box<dyn Model>> {
        let eta = self.eta;
        let m = if self.intercept {
            with_intercept(features, targets, |f, t| fit_ridge(f, t, eta))?
        } else {
            fit_ridge(features, targets, eta)?
        };
        Ok(Box::new(m))
    }
}

/// Predicts the training mean of the targets.
#[derive(Clone, Debug, Default)]
pub struct MeanLearner;

struct Constant(f64);

impl Model for Constant {
    fn predict(&self, features: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_element(features.nrows(), self.0)
    }
}

impl Learner for MeanLearner {
    fn name(&self) -> String {
        "mean".into()
    }

    fn fit(&self, _features: &DMatrix<f64>, targets: &DVector<f64>) -> Result<Box<dyn Model>> {
        if targets.is_empty() {
            return Err(Error::invalid("mean of zero targets"));
        }
        Ok(Box::new(Constant(targets.mean())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(r: &mut rng::StreamRng) -> f64 {
        StandardNormal.sample(r)
    }

    fn randn(r: &mut rng::StreamRng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(r))
    }

    #[test]
    fn ols_exact_line() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let y = DVector::from_vec(vec![2.0, 4.0]);
        let m = fit_ols(&x, &y).unwrap();
        assert!((m.coef[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ols_identity_design() {
        let x = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![0.3, -7.0]);
        let m = fit_ols(&x, &y).unwrap();
        assert_eq!(m.coef, y);
    }

    /// Normal equations solved by Gaussian elimination with partial pivoting,
    /// written out independently of the Cholesky path.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, piv);
            b.swap(k, piv);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn ols_matches_independent_solve_and_orthogonality() {
        let mut r = rng::stream(11, 0);
        let x = randn(&mut r, 50, 3);
        let y = DVector::from_fn(50, |i, _| x[(i, 0)] - 2.0 * x[(i, 2)] + normal(&mut r));
        let m = fit_ols(&x, &y).unwrap();
        let a: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| x.column(i).dot(&x.column(j))).collect())
            .collect();
        let b: Vec<f64> = (0..3).map(|i| x.column(i).dot(&y)).collect();
        let oracle = gauss_solve(a, b);
        for j in 0..3 {
            assert!((m.coef[j] - oracle[j]).abs() < 1e-8);
        }
        let resid = &y - &x * &m.coef;
        let scale = linalg::max_abs(&y).max(1.0) * linalg::max_abs(&DVector::from_iterator(150, x.iter().copied()));
        assert!(linalg::max_abs(&x.tr_mul(&resid)) <= 1e-8 * 50.0 * scale);
    }

    #[test]
    fn ridge_limits() {
        let mut r = rng::stream(12, 0);
        let x = randn(&mut r, 30, 4);
        let y = DVector::from_fn(30, |i, _| x[(i, 1)] + 0.5);
        let ols = fit_ols(&x, &y).unwrap();
        let r0 = fit_ridge(&x, &y, 0.0).unwrap();
        assert!((ols.coef - r0.coef).amax() <= 1e-10);
        let big = fit_ridge(&x, &y, 1e12).unwrap();
        assert!(big.coef.amax() <= 1e-6);
    }

    #[test]
    fn ridge_scalar_closed_form() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0]);
        let m = fit_ridge(&x, &y, 2.0).unwrap();
        assert!((m.coef[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_gram_is_singular_error() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(fit_ols(&x, &y), Err(Error::Singular { .. })));
    }

    #[test]
    fn intercept_learner_recovers_affine_map() {
        let mut r = rng::stream(13, 0);
        let z = randn(&mut r, 40, 2);
        let t = DVector::from_fn(40, |i, _| 3.0 + 2.0 * z[(i, 0)] - z[(i, 1)]);
        let m = Ols { intercept: true }.fit(&z, &t).unwrap();
        assert!((m.predict(&z) - &t).amax() < 1e-10);
    }

    #[test]
    fn config_validation() {
        assert!(PenaltyConfig::default().validate().is_ok());
        assert!(PenaltyConfig::default().with_grid(vec![]).validate().is_err());
        assert!(PenaltyConfig::default().with_grid(vec![1.0, 1.0]).validate().is_err());
        assert!(PenaltyConfig::default().with_grid(vec![1.0, -0.5]).validate().is_err());
        assert!(PenaltyConfig::default().with_folds(1).validate().is_err());
    }
}
