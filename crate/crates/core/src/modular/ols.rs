use nalgebra::{DMatrix, DVector};

use super::cross_term::{proxy_cross_term_identity, CrossTermKind, ProxyCrossTerm};
use super::fit::{EstimatorTag, ModularFit};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{gram, spd_factor};

/// Which influence function to plug into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InfluenceKind {
    /// `G⁻¹ (C_i − X_i X_iᵀ θ)`.
    Mod,
    /// `G⁻¹ (X_i Y_i − X_i X_iᵀ θ)`.
    Ols,
}

fn check_conformable(x: &DMatrix<f64>, c: &ProxyCrossTerm) -> Result<()> {
    if c.p_x() != x.ncols() {
        return Err(Error::shape(format!(
            "cross-term has length {}, x has {} columns",
            c.p_x(),
            x.ncols()
        )));
    }
    Ok(())
}

/// `θ̂ = G⁻¹ Ĉ` with `G = (1/n) XᵀX`, the minimizer of `½θᵀGθ − Ĉᵀθ`.
/// When the cross-term carries per-row contributions the plug-in
/// influence-function covariance is attached.
pub fn modular_ols(d: &Dataset, c: &ProxyCrossTerm) -> Result<ModularFit> {
    let x = d.x()?;
    check_conformable(x, c)?;
    let g = gram(x);
    let chol = spd_factor(&g)?;
    let theta = chol.solve(&c.c_hat);
    let objective = 0.5 * theta.dot(&(&g * &theta)) - c.c_hat.dot(&theta);
    let tag = if c.kind == CrossTermKind::Identity {
        EstimatorTag::Ols
    } else {
        EstimatorTag::ModOls
    };
    let mut fit = ModularFit::new(theta, tag, d.n(), objective);
    if let Some(rows) = &c.per_row {
        let g_inv = chol.inverse();
        let sigma = sandwich(&g_inv, &score_rows(x, rows, &fit.theta));
        fit.covariance = Some(sigma / d.n() as f64);
    }
    fit.partition = c.partition.clone();
    Ok(fit)
}

/// Ordinary least squares as the identity-kind modular estimator.
pub fn ols(d: &Dataset) -> Result<ModularFit> {
    modular_ols(d, &proxy_cross_term_identity(d)?)
}

/// `C_i − X_i X_iᵀ θ` row by row.
fn score_rows(x: &DMatrix<f64>, contributions: &DMatrix<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    let fitted = x * theta;
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| contributions[(i, j)] - x[(i, j)] * fitted[i])
}

/// `A (1/n) Σ r_i r_iᵀ A` with `A` symmetric, symmetrized.
pub(crate) fn sandwich(a: &DMatrix<f64>, rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.nrows().max(1) as f64;
    let phi = rows * a;
    let s = phi.tr_mul(&phi) / n;
    (&s + s.transpose()) * 0.5
}

/// Plug-in asymptotic covariance `Σ̂ = (1/n) Σ φ̂_i φ̂_iᵀ` of `√n (θ̂ − θ*)`,
/// with `θ*` replaced by `theta`. Divide by `n` for the covariance of `θ̂`.
pub fn influence_covariance(
    d: &Dataset,
    c: &ProxyCrossTerm,
    theta: &DVector<f64>,
    which: InfluenceKind,
) -> Result<DMatrix<f64>> {
    let x = d.x()?;
    check_conformable(x, c)?;
    if theta.len() != x.ncols() {
        return Err(Error::shape("theta length differs from p_x"));
    }
    let g_inv = spd_factor(&gram(x))?.inverse();
    let rows = match which {
        InfluenceKind::Mod => score_rows(x, c.per_row()?, theta),
        InfluenceKind::Ols => {
            let y = d.y()?;
            let xy = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * y[i]);
            score_rows(x, &xy, theta)
        }
    };
    Ok(sandwich(&g_inv, &rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_symmetric_psd;
    use crate::modular::{proxy_cross_term_lm, CrossFitPredictions};
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_data(seed: u64, n: usize, p: usize) -> Dataset {
        let mut r = rng::stream(seed, 0);
        let mut draw = || -> f64 { StandardNormal.sample(&mut r) };
        let x = DMatrix::from_fn(n, p, |_, _| draw());
        let z = DMatrix::from_fn(n, 2, |_, _| draw());
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + draw());
        Dataset::triples(x, z, y).unwrap()
    }

    #[test]
    fn identity_plugin_is_ols() {
        let d = random_data(1, 40, 3);
        let a = ols(&d).unwrap();
        let c = proxy_cross_term_lm(&d, &CrossFitPredictions::identity(&d).unwrap()).unwrap();
        let b = modular_ols(&d, &c).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.tag, EstimatorTag::Ols);
        assert_eq!(b.tag, EstimatorTag::ModOls);
        let inf_mod = influence_covariance(&d, &c, &b.theta, InfluenceKind::Mod).unwrap();
        let inf_ols = influence_covariance(&d, &c, &b.theta, InfluenceKind::Ols).unwrap();
        assert_eq!(inf_mod, inf_ols);
    }

    #[test]
    fn orthonormal_design_returns_cross_term() {
        let x = DMatrix::from_row_slice(2, 2, &[2f64.sqrt(), 0.0, 0.0, 2f64.sqrt()]);
        let d = Dataset::xy(x, DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let c = ProxyCrossTerm {
            c_hat: DVector::from_vec(vec![0.4, -0.8]),
            kind: CrossTermKind::Lm,
            partition: None,
            per_row: None,
            fusion: None,
        };
        let fit = modular_ols(&d, &c).unwrap();
        assert!((fit.theta - &c.c_hat).amax() < 1e-15);
    }

    #[test]
    fn noiseless_data_has_zero_ols_covariance() {
        let mut r = rng::stream(2, 0);
        let x = DMatrix::from_fn(30, 2, |_, _| -> f64 { StandardNormal.sample(&mut r) });
        let y = &x * DVector::from_vec(vec![0.5, -1.5]);
        let d = Dataset::xy(x, y).unwrap();
        let fit = ols(&d).unwrap();
        let c = proxy_cross_term_identity(&d).unwrap();
        let s = influence_covariance(&d, &c, &fit.theta, InfluenceKind::Ols).unwrap();
        assert!(s.amax() <= 1e-16 * 30.0 * 10.0);
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let d = random_data(3, 60, 4);
        let fit = ols(&d).unwrap();
        assert!(is_symmetric_psd(fit.covariance.as_ref().unwrap(), 1e-8));
    }

    #[test]
    fn singular_gram_is_reported() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let d = Dataset::xy(x, DVector::from_vec(vec![1.0, 0.0, 1.0])).unwrap();
        assert!(matches!(ols(&d), Err(Error::Singular { .. })));
    }
}
