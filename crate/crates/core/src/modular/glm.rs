use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cross_term::{CrossTermKind, ProxyCrossTerm};
use super::fit::{EstimatorTag, ModularFit};
use super::ols::sandwich;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, spd_factor};

/// Convex potential `h(x, θ) = ψ(xᵀθ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlmFamily {
    /// `ψ(η) = η²/2`
    Gaussian,
    /// `ψ(η) = log(1 + eᵑ)`
    Logistic,
    /// `ψ(η) = eᵑ`
    Poisson,
}

impl std::str::FromStr for GlmFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(GlmFamily::Gaussian),
            "logistic" => Ok(GlmFamily::Logistic),
            "poisson" => Ok(GlmFamily::Poisson),
            other => Err(Error::invalid(format!("unknown family `{other}`"))),
        }
    }
}

impl GlmFamily {
    pub fn psi(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => 0.5 * eta * eta,
            GlmFamily::Logistic => eta.max(0.0) + (-eta.abs()).exp().ln_1p(),
            GlmFamily::Poisson => eta.exp(),
        }
    }

    pub fn dpsi(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => eta,
            GlmFamily::Logistic => sigmoid(eta),
            GlmFamily::Poisson => eta.exp(),
        }
    }

    pub fn d2psi(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => 1.0,
            GlmFamily::Logistic => {
                let s = sigmoid(eta);
                s * (1.0 - s)
            }
            GlmFamily::Poisson => eta.exp(),
        }
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Newton iteration settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    pub max_steps: usize,
    /// Converged when `‖∇‖∞` is at most this.
    pub grad_tol: f64,
    pub armijo: f64,
    pub max_halvings: usize,
    /// Coefficient norm beyond which the data are declared separable.
    pub separation_norm: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            max_steps: 100,
            grad_tol: 1e-8,
            armijo: 1e-4,
            max_halvings: 60,
            separation_norm: 1e3,
        }
    }
}

struct Objective<'a> {
    x: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
    family: GlmFamily,
}

impl Objective<'_> {
    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let eta = self.x * theta;
        eta.iter().map(|&e| self.family.psi(e)).sum::<f64>() / self.n() - self.c.dot(theta)
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let eta = self.x * theta;
        let w = eta.map(|e| self.family.dpsi(e));
        self.x.tr_mul(&w) / self.n() - self.c
    }

    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let eta = self.x * theta;
        let mut xw = self.x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= self.family.d2psi(eta[i]);
        }
        self.x.tr_mul(&xw) / self.n()
    }
}

/// A logistic objective whose slope at infinity along `θ̂/‖θ̂‖`,
/// `(1/n) Σ max(X_iᵀd, 0) − Ĉᵀd`, is not positive keeps decreasing along that
/// ray, so `‖θ‖` would grow past any bound. The gradient test alone stops
/// such runs early because the loss flattens exponentially.
fn check_recession(obj: &Objective<'_>, theta: &DVector<f64>) -> Result<()> {
    let norm = theta.norm();
    if norm == 0.0 {
        return Ok(());
    }
    let dir = theta / norm;
    let margins = obj.x * &dir;
    let scale = margins.iter().map(|m| m.abs()).sum::<f64>() / obj.n();
    let slope = margins.iter().map(|m| m.max(0.0)).sum::<f64>() / obj.n() - obj.c.dot(&dir);
    if slope <= 1e-9 * scale.max(1.0) {
        return Err(Error::Separation { norm });
    }
    Ok(())
}

/// Minimizes `(1/n) Σ ψ(X_iᵀθ) − Ĉᵀθ` by damped Newton.
pub fn modular_glm(
    d: &Dataset,
    c: &ProxyCrossTerm,
    family: GlmFamily,
    init: Option<&DVector<f64>>,
) -> Result<ModularFit> {
    modular_glm_with(d, c, family, init, &NewtonSettings::default(), None)
}

/// As [`modular_glm`]; `trace` receives the objective at the start and
/// after every accepted step.
pub fn modular_glm_with(
    d: &Dataset,
    c: &ProxyCrossTerm,
    family: GlmFamily,
    init: Option<&DVector<f64>>,
    settings: &NewtonSettings,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<ModularFit> {
    let x = d.x()?;
    let p = x.ncols();
    if c.p_x() != p {
        return Err(Error::shape(format!("cross-term has length {}, p_x = {p}", c.p_x())));
    }
    let obj = Objective { x, c: &c.c_hat, family };
    let mut theta = match init {
        Some(t) if t.len() == p => t.clone(),
        Some(t) => return Err(Error::shape(format!("init has length {}, p_x = {p}", t.len()))),
        None => DVector::zeros(p),
    };
    let mut value = obj.value(&theta);
    if let Some(t) = trace.as_deref_mut() {
        t.push(value);
    }
    let mut grad = obj.gradient(&theta);
    let mut steps = 0;
    while max_abs(&grad) > settings.grad_tol {
        if steps == settings.max_steps {
            return Err(Error::NewtonNoConvergence {
                steps,
                grad_norm: max_abs(&grad),
            });
        }
        steps += 1;
        let h = obj.hessian(&theta);
        let dir = match spd_factor(&h) {
            Ok(chol) => -chol.solve(&grad),
            // saturated probabilities: the Hessian vanishes along the separating direction
            Err(_) if family == GlmFamily::Logistic && theta.norm() > 1.0 => {
                return Err(Error::Separation { norm: theta.norm() });
            }
            Err(e) => return Err(e),
        };
        let slope = grad.dot(&dir);
        let slack = 1e-14 * value.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let cand = &theta + &dir * t;
            let v = obj.value(&cand);
            if v.is_finite() && v <= value + settings.armijo * t * slope + slack {
                accepted = Some((cand, v));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            return Err(Error::NewtonNoConvergence {
                steps,
                grad_norm: max_abs(&grad),
            });
        };
        theta = cand;
        value = v;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(value);
        }
        if theta.norm() > settings.separation_norm {
            return Err(Error::Separation { norm: theta.norm() });
        }
        grad = obj.gradient(&theta);
    }

    if family == GlmFamily::Logistic {
        check_recession(&obj, &theta)?;
    }

    let tag = if c.kind == CrossTermKind::Identity {
        EstimatorTag::Glm
    } else {
        EstimatorTag::ModGlm
    };
    let mut fit = ModularFit::new(theta, tag, d.n(), value);
    if let Some(rows) = &c.per_row {
        let h_inv = spd_factor(&obj.hessian(&fit.theta))?.inverse();
        let eta = x * &fit.theta;
        let scores = DMatrix::from_fn(x.nrows(), p, |i, j| rows[(i, j)] - x[(i, j)] * family.dpsi(eta[i]));
        fit.covariance = Some(sandwich(&h_inv, &scores) / d.n() as f64);
    }
    fit.partition = c.partition.clone();
    Ok(fit)
}
