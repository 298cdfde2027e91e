use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};

use super::cross_term::StructurePartition;
use crate::learners::LassoPath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorTag {
    #[serde(rename = "mod-ols")]
    ModOls,
    #[serde(rename = "ols")]
    Ols,
    #[serde(rename = "mod-glm")]
    ModGlm,
    #[serde(rename = "glm")]
    Glm,
    #[serde(rename = "mod-lasso")]
    ModLasso,
    #[serde(rename = "lasso")]
    Lasso,
}

impl EstimatorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::ModOls => "mod-ols",
            EstimatorTag::Ols => "ols",
            EstimatorTag::ModGlm => "mod-glm",
            EstimatorTag::Glm => "glm",
            EstimatorTag::ModLasso => "mod-lasso",
            EstimatorTag::Lasso => "lasso",
        }
    }
}

/// A fitted coefficient vector with optional covariance (already divided by
/// `n`) and, for penalized fits, the λ path.
#[derive(Clone, Debug, PartialEq)]
pub struct ModularFit {
    pub theta: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
    pub objective_value: f64,
    pub tag: EstimatorTag,
    pub n: usize,
    pub p_x: usize,
    pub lambda: Option<f64>,
    pub path: Option<LassoPath>,
    pub partition: Option<StructurePartition>,
    /// Ridge penalties of the projection operators, when applicable.
    pub etas: Option<(f64, f64)>,
}

impl ModularFit {
    pub(crate) fn new(theta: DVector<f64>, tag: EstimatorTag, n: usize, objective_value: f64) -> Self {
        Self {
            p_x: theta.len(),
            theta,
            covariance: None,
            objective_value,
            tag,
            n,
            lambda: None,
            path: None,
            partition: None,
            etas: None,
        }
    }

    /// Wald interval `θ̂_j ± z · sqrt(cov_jj)`.
    pub fn wald_interval(&self, j: usize, z: f64) -> Option<(f64, f64)> {
        let cov = self.covariance.as_ref()?;
        let half = z * cov[(j, j)].max(0.0).sqrt();
        Some((self.theta[j] - half, self.theta[j] + half))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

#[derive(Serialize)]
struct FitRecord<'a> {
    theta: Vec<f64>,
    covariance: Option<Vec<Vec<f64>>>,
    tag: EstimatorTag,
    n: usize,
    p_x: usize,
    objective_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    partition: Option<&'a StructurePartition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta_y: Option<f64>,
}

impl Serialize for ModularFit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FitRecord {
            theta: self.theta.iter().copied().collect(),
            covariance: self.covariance.as_ref().map(|c| {
                (0..c.nrows())
                    .map(|i| c.row(i).iter().copied().collect())
                    .collect()
            }),
            tag: self.tag,
            n: self.n,
            p_x: self.p_x,
            objective_value: self.objective_value,
            lambda: self.lambda,
            partition: self.partition.as_ref(),
            eta_x: self.etas.map(|e| e.0),
            eta_y: self.etas.map(|e| e.1),
        }
        .serialize(s)
    }
}
