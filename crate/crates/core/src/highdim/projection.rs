use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::lasso::fit_from_path;
use crate::data::{split_folds, Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::learners::{cv_l1_path, CvProblem, PenaltyConfig, RowwiseProblem};
use crate::linalg::{gram, select_entries, select_rows, spd_inverse};
use crate::modular::{EstimatorTag, ModularFit};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProjectionSource {
    Identity,
    /// `Z (ZᵀZ + ηI)⁻¹ Zᵀ`; `η = 0` is the least-squares hat matrix.
    RidgeHat { eta: f64 },
    Custom,
}

#[derive(Clone, Debug)]
enum Repr {
    Identity(usize),
    /// `Z M Zᵀ` with `M = (ZᵀZ + ηI)⁻¹`.
    LowRank { z: DMatrix<f64>, m: DMatrix<f64> },
    Dense(DMatrix<f64>),
}

/// A symmetric `n × n` linear smoother `Π`.
#[derive(Clone, Debug)]
pub struct ProjectionOperator {
    repr: Repr,
    pub source: ProjectionSource,
}

impl ProjectionOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            repr: Repr::Identity(n),
            source: ProjectionSource::Identity,
        }
    }

    pub fn ols_hat(z: &DMatrix<f64>) -> Result<Self> {
        Self::ridge_hat(z, 0.0)
    }

    /// Built from a `p_z × p_z` solve and applied in `O(n p_z)`.
    pub fn ridge_hat(z: &DMatrix<f64>, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!("ridge penalty must be finite and nonnegative, got {eta}")));
        }
        let mut a = z.tr_mul(z);
        for i in 0..a.nrows() {
            a[(i, i)] += eta;
        }
        let m = spd_inverse(&a)?;
        Ok(Self {
            repr: Repr::LowRank { z: z.clone(), m: (&m + m.transpose()) * 0.5 },
            source: ProjectionSource::RidgeHat { eta },
        })
    }

    pub fn from_matrix(pi: DMatrix<f64>) -> Result<Self> {
        if pi.nrows() != pi.ncols() {
            return Err(Error::shape("projection matrix must be square"));
        }
        let scale = pi.amax().max(1.0);
        if (&pi - pi.transpose()).amax() > 1e-10 * scale {
            return Err(Error::invalid("projection matrix must be symmetric"));
        }
        Ok(Self {
            repr: Repr::Dense(pi),
            source: ProjectionSource::Custom,
        })
    }

    pub fn n(&self) -> usize {
        match &self.repr {
            Repr::Identity(n) => *n,
            Repr::LowRank { z, .. } => z.nrows(),
            Repr::Dense(m) => m.nrows(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Identity(_) => v.clone(),
            Repr::LowRank { z, m } => z * (m * z.tr_mul(v)),
            Repr::Dense(p) => p * v,
        }
    }

    /// The dense `n × n` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Identity(n) => DMatrix::identity(*n, *n),
            Repr::LowRank { z, m } => z * m * z.transpose(),
            Repr::Dense(p) => p.clone(),
        }
    }
}

/// `(Π_y + Π_x − Π_x Π_y) Y`.
pub fn transformed_response(
    y: &DVector<f64>,
    pi_x: &ProjectionOperator,
    pi_y: &ProjectionOperator,
) -> DVector<f64> {
    let py = pi_y.apply(y);
    let px = pi_x.apply(y);
    let pxpy = pi_x.apply(&py);
    DVector::from_fn(y.len(), |i, _| py[i] + px[i] - pxpy[i])
}

/// Lasso of `X` on the transformed response, with `λ` chosen by K-fold
/// cross-validation on held-out `(Y − Xθ)²` for raw `Y`.
pub fn projection_shortcut(
    d: &Dataset,
    pi_x: &ProjectionOperator,
    pi_y: &ProjectionOperator,
    config: &PenaltyConfig,
    seed: u64,
) -> Result<ModularFit> {
    let x = d.x()?;
    let y = d.y()?;
    let n = d.n();
    if pi_x.n() != n || pi_y.n() != n {
        return Err(Error::shape(format!(
            "operators are {}x{} and {}x{}, data have {n} rows",
            pi_x.n(),
            pi_x.n(),
            pi_y.n(),
            pi_y.n()
        )));
    }
    if n < config.cv_folds {
        return Err(Error::invalid(format!("{n} rows cannot fill {} folds", config.cv_folds)));
    }
    let yt = transformed_response(y, pi_x, pi_y);
    let contributions = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] * yt[i]);
    let folds = split_folds(n, config.cv_folds, seed)?;
    let problem = RowwiseProblem::new(x, &contributions, y, folds)?;
    let path = cv_l1_path(&problem, config)?;
    let (g, c) = problem.full()?;
    let tag = if pi_x.source == ProjectionSource::Identity && pi_y.source == ProjectionSource::Identity {
        EstimatorTag::Lasso
    } else {
        EstimatorTag::ModLasso
    };
    Ok(fit_from_path(path, &g, &c, config, tag, n))
}

/// Cross-validation problem for one `(η_x, η_y)` cell: ridge hats are
/// rebuilt from the training rows of each fold.
struct EtaCell<'a> {
    x: &'a DMatrix<f64>,
    z: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    eta_x: f64,
    eta_y: f64,
    folds: &'a FoldAssignment,
}

impl EtaCell<'_> {
    fn problem(&self, rows: &[usize]) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let x = select_rows(self.x, rows);
        let z = select_rows(self.z, rows);
        let y = select_entries(self.y, rows);
        let pi_x = ProjectionOperator::ridge_hat(&z, self.eta_x)?;
        let pi_y = ProjectionOperator::ridge_hat(&z, self.eta_y)?;
        let yt = transformed_response(&y, &pi_x, &pi_y);
        Ok((gram(&x), x.tr_mul(&yt) / rows.len() as f64))
    }
}

impl CvProblem for EtaCell<'_> {
    fn n_folds(&self) -> usize {
        self.folds.k()
    }

    fn full(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.problem(&(0..self.x.nrows()).collect::<Vec<_>>())
    }

    fn train(&self, fold: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.problem(&self.folds.train_rows(fold))
    }

    fn heldout_loss(&self, fold: usize, theta: &DVector<f64>) -> f64 {
        let rows = self.folds.test_rows(fold);
        let sum: f64 = rows
            .iter()
            .map(|&i| (self.y[i] - self.x.row(i).transpose().dot(theta)).powi(2))
            .sum();
        sum / rows.len().max(1) as f64
    }
}

/// Grid search over ridge penalties `(η_x, η_y)` of the projection shortcut.
/// Each cell is scored by its smallest cross-validated error over `λ`; the
/// winning cell is refitted on all rows with [`projection_shortcut`].
pub fn cv_projection_etas(
    d: &Dataset,
    eta_grid_x: &[f64],
    eta_grid_y: &[f64],
    config: &PenaltyConfig,
    seed: u64,
) -> Result<(f64, f64, ModularFit)> {
    if eta_grid_x.is_empty() || eta_grid_y.is_empty() {
        return Err(Error::invalid("empty eta grid"));
    }
    let x = d.x()?;
    let z = d.z()?;
    let y = d.y()?;
    let (eta_x, eta_y) = if eta_grid_x.len() == 1 && eta_grid_y.len() == 1 {
        (eta_grid_x[0], eta_grid_y[0])
    } else {
        if d.n() < config.cv_folds {
            return Err(Error::invalid(format!("{} rows cannot fill {} folds", d.n(), config.cv_folds)));
        }
        let folds = split_folds(d.n(), config.cv_folds, seed)?;
        let cells: Vec<(f64, f64)> = eta_grid_x
            .iter()
            .flat_map(|&ex| eta_grid_y.iter().map(move |&ey| (ex, ey)))
            .collect();
        let scores: Vec<f64> = cells
            .par_iter()
            .map(|&(eta_x, eta_y)| {
                let cell = EtaCell { x, z, y, eta_x, eta_y, folds: &folds };
                let path = cv_l1_path(&cell, config)?;
                Ok(path.cv_error.iter().copied().fold(f64::INFINITY, f64::min))
            })
            .collect::<Result<_>>()?;
        let best = scores
            .iter()
            .enumerate()
            .fold(0, |b, (i, &s)| if s < scores[b] { i } else { b });
        cells[best]
    };
    let pi_x = ProjectionOperator::ridge_hat(z, eta_x)?;
    let pi_y = ProjectionOperator::ridge_hat(z, eta_y)?;
    let mut fit = projection_shortcut(d, &pi_x, &pi_y, config, seed)?;
    fit.etas = Some((eta_x, eta_y));
    Ok((eta_x, eta_y, fit))
}
