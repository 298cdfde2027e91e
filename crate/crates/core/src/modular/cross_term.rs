use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::crossfit::CrossFitPredictions;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fusion::FusionTerms;
use crate::linalg::{all_finite, column_means};

/// How a cross-term was assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossTermKind {
    Lm,
    Struct,
    Miss,
    Part,
    Identity,
}

/// Split of the covariates into those treated as conditionally independent
/// of `Y` given the enlarged conditioning set (`j1`) and those merged into
/// it (`j2`). Indices are 0-based.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructurePartition {
    pub j1: Vec<usize>,
    pub j2: Vec<usize>,
}

impl StructurePartition {
    /// Partition with the given `j2`; every other index goes to `j1`.
    pub fn from_j2(p_x: usize, mut j2: Vec<usize>) -> Result<Self> {
        j2.sort_unstable();
        j2.dedup();
        if let Some(&bad) = j2.iter().find(|&&j| j >= p_x) {
            return Err(Error::invalid(format!("index {bad} out of range for p_x = {p_x}")));
        }
        let j1 = (0..p_x).filter(|j| j2.binary_search(j).is_err()).collect();
        Ok(Self { j1, j2 })
    }

    pub fn all_modular(p_x: usize) -> Self {
        Self {
            j1: (0..p_x).collect(),
            j2: Vec::new(),
        }
    }

    pub fn p_x(&self) -> usize {
        self.j1.len() + self.j2.len()
    }

    pub fn validate(&self, p_x: usize) -> Result<()> {
        let mut all: Vec<usize> = self.j1.iter().chain(&self.j2).copied().collect();
        all.sort_unstable();
        if all != (0..p_x).collect::<Vec<_>>() {
            return Err(Error::invalid(format!(
                "j1 and j2 must partition 0..{p_x}"
            )));
        }
        Ok(())
    }
}

/// The proxy `Ĉ` for `(1/n) Σ X_i Y_i`, with per-row contributions `C_i`
/// kept for covariance estimation when they exist.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyCrossTerm {
    pub c_hat: DVector<f64>,
    pub kind: CrossTermKind,
    pub partition: Option<StructurePartition>,
    /// `n × p_x` matrix whose column means are `c_hat`.
    pub per_row: Option<DMatrix<f64>>,
    /// Block terms of a fusion cross-term.
    pub fusion: Option<FusionTerms>,
}

impl ProxyCrossTerm {
    pub fn p_x(&self) -> usize {
        self.c_hat.len()
    }

    pub fn per_row(&self) -> Result<&DMatrix<f64>> {
        self.per_row
            .as_ref()
            .ok_or_else(|| Error::invalid("cross-term has no per-row contributions"))
    }

    pub(crate) fn from_rows(per_row: DMatrix<f64>, kind: CrossTermKind) -> Result<Self> {
        if !all_finite(per_row.iter()) {
            return Err(Error::NonFinite("cross-term contributions".into()));
        }
        Ok(Self {
            c_hat: column_means(&per_row),
            kind,
            partition: None,
            per_row: Some(per_row),
            fusion: None,
        })
    }
}

/// `C_i = X_i Y_i`.
pub fn proxy_cross_term_identity(d: &Dataset) -> Result<ProxyCrossTerm> {
    let x = d.x()?;
    let y = d.y()?;
    let rows = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * y[i]);
    ProxyCrossTerm::from_rows(rows, CrossTermKind::Identity)
}

/// `C_i = X_i μ̂_y(Z_i) + μ̂_x(Z_i) Y_i − μ̂_x(Z_i) μ̂_y(Z_i)`, and `Ĉ` their mean.
pub fn proxy_cross_term_lm(d: &Dataset, preds: &CrossFitPredictions) -> Result<ProxyCrossTerm> {
    let rows = lm_rows(d.x()?, d.y()?, &preds.mu_x, &preds.mu_y)?;
    ProxyCrossTerm::from_rows(rows, CrossTermKind::Lm)
}

pub(crate) fn lm_rows(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    mu_x: &DMatrix<f64>,
    mu_y: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if y.len() != n || mu_x.shape() != x.shape() || mu_y.len() != n {
        return Err(Error::shape(format!(
            "x is {}x{}, y {}, mu_x {}x{}, mu_y {}",
            n,
            x.ncols(),
            y.len(),
            mu_x.nrows(),
            mu_x.ncols(),
            mu_y.len()
        )));
    }
    Ok(DMatrix::from_fn(n, x.ncols(), |i, j| {
        x[(i, j)] * mu_y[i] + mu_x[(i, j)] * y[i] - mu_x[(i, j)] * mu_y[i]
    }))
}
