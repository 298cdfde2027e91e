//! λ paths and K-fold cross-validation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::l1::{CoordinateDescent, L1Solution};
use super::{CvRule, Learner, LinearModel, Model, PenaltyConfig};
use crate::data::{split_folds, FoldAssignment};
use crate::error::{Error, Result};
use crate::linalg::{self, column_means, column_means_of, max_abs, select_rows};

/// A penalized quadratic problem that can be re-posed on training folds and
/// scored on the held-out fold.
pub trait CvProblem: Sync {
    fn n_folds(&self) -> usize;

    /// `(G, c)` on all data.
    fn full(&self) -> Result<(DMatrix<f64>, DVector<f64>)>;

    /// `(G, c)` on the rows outside `fold`.
    fn train(&self, fold: usize) -> Result<(DMatrix<f64>, DVector<f64>)>;

    /// Mean held-out loss of `theta` on `fold`.
    fn heldout_loss(&self, fold: usize, theta: &DVector<f64>) -> f64;
}

/// Problems whose linear term is the mean of per-row contributions `C_i`
/// and whose held-out loss is squared prediction error `(Y − Xθ)²`.
///
/// With `C_i = X_i Y_i` this is the Lasso; with modular contributions it is
/// the modular Lasso scored on raw `Y`.
pub struct RowwiseProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub contributions: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub folds: FoldAssignment,
}

impl<'a> RowwiseProblem<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        contributions: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        folds: FoldAssignment,
    ) -> Result<Self> {
        let n = x.nrows();
        if contributions.nrows() != n || contributions.ncols() != x.ncols() || y.len() != n || folds.n() != n {
            return Err(Error::shape("rowwise problem blocks disagree"));
        }
        Ok(Self {
            x,
            contributions,
            y,
            folds,
        })
    }
}

impl CvProblem for RowwiseProblem<'_> {
    fn n_folds(&self) -> usize {
        self.folds.k()
    }

    fn full(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        Ok((linalg::gram(self.x), column_means(self.contributions)))
    }

    fn train(&self, fold: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let rows = self.folds.train_rows(fold);
        if rows.is_empty() {
            return Err(Error::invalid(format!("fold {fold} leaves no training rows")));
        }
        Ok((
            linalg::gram(&select_rows(self.x, &rows)),
            column_means_of(self.contributions, &rows),
        ))
    }

    fn heldout_loss(&self, fold: usize, theta: &DVector<f64>) -> f64 {
        let rows = self.folds.test_rows(fold);
        let mut acc = 0.0;
        for &i in &rows {
            let r = self.y[i] - self.x.row(i).transpose().dot(theta);
            acc += r * r;
        }
        acc / rows.len().max(1) as f64
    }
}

/// Coefficient path with cross-validation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoPath {
    /// Penalties, decreasing, on the solver's scale.
    pub lambdas: Vec<f64>,
    /// Coefficients on the original scale, one per penalty.
    pub coefficients: Vec<DVector<f64>>,
    pub kkt_residuals: Vec<f64>,
    pub cv_error: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub chosen: usize,
    pub rule: CvRule,
}

impl LassoPath {
    pub fn chosen_lambda(&self) -> f64 {
        self.lambdas[self.chosen]
    }

    pub fn chosen_coefficients(&self) -> &DVector<f64> {
        &self.coefficients[self.chosen]
    }

    /// Index the other rule would pick.
    pub fn index_for(&self, rule: CvRule) -> usize {
        select_index(&self.cv_error, &self.cv_se, rule)
    }

    /// CSV with columns `lambda, cv_error, cv_se, nnz, theta_1..theta_p`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let p = self.coefficients.first().map_or(0, |c| c.len());
        let mut header = vec!["lambda".to_string(), "cv_error".into(), "cv_se".into(), "nnz".into()];
        header.extend((1..=p).map(|j| format!("theta_{j}")));
        w.write_record(&header)?;
        for (k, theta) in self.coefficients.iter().enumerate() {
            let mut rec = vec![
                fmt_f64(self.lambdas[k]),
                fmt_f64(self.cv_error[k]),
                fmt_f64(self.cv_se[k]),
                theta.iter().filter(|&&v| v != 0.0).count().to_string(),
            ];
            rec.extend(theta.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<path csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation
    format!("{v:?}")
}

/// `n` log-spaced penalties from `lambda_max` down to `ratio · lambda_max`.
pub fn default_lambda_grid(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    let top = if lambda_max > 0.0 { lambda_max } else { 1.0 };
    if n == 1 {
        return vec![top];
    }
    let (hi, lo) = (top.ln(), (top * ratio).ln());
    (0..n)
        .map(|k| {
            if k == 0 {
                top
            } else {
                (hi + (lo - hi) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Index chosen by `rule` from mean CV errors and their standard errors.
/// Grids are ordered from most to least penalized, so ties resolve toward
/// the larger penalty.
pub fn select_index(errors: &[f64], ses: &[f64], rule: CvRule) -> usize {
    let best = errors
        .iter()
        .enumerate()
        .fold(0, |b, (i, &e)| if e < errors[b] { i } else { b });
    match rule {
        CvRule::Min => best,
        CvRule::OneSe => {
            let bound = errors[best] + ses[best];
            errors.iter().position(|&e| e <= bound).unwrap_or(best)
        }
    }
}

pub(crate) fn column_scales(gram: &DMatrix<f64>, standardize: bool) -> DVector<f64> {
    DVector::from_fn(gram.nrows(), |j, _| {
        let s = gram[(j, j)].max(0.0).sqrt();
        if standardize && s > 0.0 {
            s
        } else {
            1.0
        }
    })
}

fn rescale(gram: &DMatrix<f64>, linear: &DVector<f64>, scales: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let g = DMatrix::from_fn(gram.nrows(), gram.ncols(), |i, j| gram[(i, j)] / (scales[i] * scales[j]));
    let c = linear.component_div(scales);
    (g, c)
}

fn solve_path(
    gram: &DMatrix<f64>,
    linear: &DVector<f64>,
    lambdas: &[f64],
) -> Result<Vec<L1Solution>> {
    let solver = CoordinateDescent::default();
    let mut warm: Option<DVector<f64>> = None;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let sol = solver.solve(gram, linear, lambda, warm.as_ref())?;
        warm = Some(sol.theta.clone());
        out.push(sol);
    }
    Ok(out)
}

/// Smallest penalty at which the solution is zero, on the solver's scale.
pub fn lambda_max(gram: &DMatrix<f64>, linear: &DVector<f64>, standardize: bool) -> f64 {
    max_abs(&linear.component_div(&column_scales(gram, standardize)))
}

/// The λ grid a problem will use: the configured grid, or the default grid
/// anchored at `‖c‖∞` on the solver's scale.
pub(crate) fn grid_for(gram: &DMatrix<f64>, linear: &DVector<f64>, config: &PenaltyConfig) -> Vec<f64> {
    match &config.lambda_grid {
        Some(g) => g.clone(),
        None => default_lambda_grid(
            lambda_max(gram, linear, config.standardize),
            config.n_lambda,
            config.lambda_min_ratio,
        ),
    }
}

/// Fits the full path and cross-validates it. Folds are evaluated in
/// parallel and reduced in fold order.
pub fn cv_l1_path<P: CvProblem>(problem: &P, config: &PenaltyConfig) -> Result<LassoPath> {
    config.validate()?;
    let k = problem.n_folds();
    if k < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    let (gram, linear) = problem.full()?;
    let scales = column_scales(&gram, config.standardize);
    let (g_s, c_s) = rescale(&gram, &linear, &scales);
    let lambdas = grid_for(&gram, &linear, config);

    let full = solve_path(&g_s, &c_s, &lambdas)?;
    let unscale = |t: &DVector<f64>| t.component_div(&scales);

    let fold_losses: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|fold| -> Result<Vec<f64>> {
            let (g, c) = problem.train(fold)?;
            let (g, c) = rescale(&g, &c, &scales);
            let path = solve_path(&g, &c, &lambdas)?;
            Ok(path
                .iter()
                .map(|s| problem.heldout_loss(fold, &unscale(&s.theta)))
                .collect())
        })
        .collect::<Result<_>>()?;

    let m = lambdas.len();
    let mut cv_error = vec![0.0; m];
    let mut cv_se = vec![0.0; m];
    for l in 0..m {
        let mean = fold_losses.iter().map(|f| f[l]).sum::<f64>() / k as f64;
        let var = fold_losses.iter().map(|f| (f[l] - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        cv_error[l] = mean;
        cv_se[l] = (var / k as f64).sqrt();
    }
    let chosen = select_index(&cv_error, &cv_se, config.cv_rule);
    Ok(LassoPath {
        coefficients: full.iter().map(|s| unscale(&s.theta)).collect(),
        kkt_residuals: full.iter().map(|s| s.kkt_residual).collect(),
        lambdas,
        cv_error,
        cv_se,
        chosen,
        rule: config.cv_rule,
    })
}

/// Cross-validated Lasso of `targets` on `features` (no intercept).
pub fn cv_lambda_path(
    features: &DMatrix<f64>,
    targets: &DVector<f64>,
    config: &PenaltyConfig,
    seed: u64,
) -> Result<LassoPath> {
    let n = features.nrows();
    if targets.len() != n {
        return Err(Error::shape(format!("{n} feature rows, {} targets", targets.len())));
    }
    if n < config.cv_folds {
        return Err(Error::invalid(format!(
            "{n} rows cannot fill {} folds",
            config.cv_folds
        )));
    }
    let contributions = DMatrix::from_fn(n, features.ncols(), |i, j| features[(i, j)] * targets[i]);
    let folds = split_folds(n, config.cv_folds, seed)?;
    let problem = RowwiseProblem::new(features, &contributions, targets, folds)?;
    cv_l1_path(&problem, config)
}

/// Cross-validated Lasso learner with an unpenalized intercept.
#[derive(Clone, Debug)]
pub struct LassoCv {
    pub config: PenaltyConfig,
    pub seed: u64,
    pub intercept: bool,
}

impl Default for LassoCv {
    fn default() -> Self {
        Self {
            config: PenaltyConfig::default(),
            seed: 0,
            intercept: true,
        }
    }
}

impl Learner for LassoCv {
    fn name(&self) -> String {
        "lasso-cv".into()
    }

    fn fit(&self, features: &DMatrix<f64>, targets: &DVector<f64>) -> Result<Box<dyn Model>> {
        let (f, t, means, ybar) = if self.intercept {
            let means = column_means(features);
            let ybar = targets.mean();
            let mut f = features.clone();
            for (j, mut col) in f.column_iter_mut().enumerate() {
                col.add_scalar_mut(-means[j]);
            }
            (f, targets.add_scalar(-ybar), means, ybar)
        } else {
            (features.clone(), targets.clone(), DVector::zeros(features.ncols()), 0.0)
        };
        let path = cv_lambda_path(&f, &t, &self.config, self.seed)?;
        let coef = path.chosen_coefficients().clone();
        let intercept = ybar - means.dot(&coef);
        Ok(Box::new(LinearModel { coef, intercept }))
    }
}
