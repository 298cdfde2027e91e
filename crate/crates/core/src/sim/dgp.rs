use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Setting, SimConfig};
use crate::data::{Dataset, FusionDataset};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, spd_solve};
use crate::modular::CrossFitPredictions;
use crate::rng::{self, StreamRng};

const ORACLE_LABEL: u64 = 0x0AC1E;
const ORACLE_BATCHES: usize = 20;

/// One replicate's draw.
#[derive(Clone, Debug)]
pub struct Generated {
    pub train: Dataset,
    /// Train rows plus pair blocks, when the config asks for pairs.
    pub fusion: Option<FusionDataset>,
    pub test: Dataset,
    /// Closed-form `θ*`, or `None` where only the numerical oracle applies.
    pub theta_star: Option<DVector<f64>>,
    /// True `E[X | Z]` and `E[Y | Z]` on the train rows, where known.
    pub oracle: Option<CrossFitPredictions>,
}

struct Design {
    setting: Setting,
    b: DMatrix<f64>,
    gamma: DVector<f64>,
    gamma_tilde: DVector<f64>,
    sigma_z: f64,
    sigma_y: f64,
    sigma_x: f64,
    p_x: usize,
    p_z: usize,
}

impl Design {
    fn new(c: &SimConfig) -> Result<Self> {
        let c = if c.b.is_some() && c.gamma.is_some() && c.gamma_tilde.is_some() {
            c.validate()?;
            c.clone()
        } else {
            c.realize()?
        };
        let (sigma_z, sigma_y) = match c.setting {
            Setting::Remark1 => (c.sigma_1, c.sigma_2),
            _ => (c.sigma_z, c.sigma_y),
        };
        Ok(Self {
            setting: c.setting,
            b: c.b_matrix()?,
            gamma: DVector::from_vec(c.gamma.clone().expect("realized")),
            gamma_tilde: DVector::from_vec(c.gamma_tilde.clone().expect("realized")),
            sigma_z,
            sigma_y,
            sigma_x: c.sigma_x,
            p_x: c.p_x,
            p_z: c.p_z,
        })
    }

    /// `n` i.i.d. rows. Noise is scaled by `noise_z` and `noise_y`.
    fn draw(&self, r: &mut StreamRng, n: usize, noise_z: f64, noise_y: f64) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let (p_x, p_z) = (self.p_x, self.p_z);
        let mut x = DMatrix::zeros(n, p_x);
        let mut z = DMatrix::zeros(n, p_z);
        let mut y = DVector::zeros(n);
        let ind = |v: f64| if v > 0.0 { 1.0 } else { 0.0 };
        for i in 0..n {
            let mut row_x = DVector::zeros(p_x);
            let mut row_z = DVector::zeros(p_z);
            match self.setting {
                Setting::Low1 | Setting::Low3 => {
                    row_x = DVector::from_fn(p_x, |_, _| r.random_range(-1.0..=1.0));
                    let bx = &self.b * &row_x;
                    if self.setting == Setting::Low1 {
                        row_z.copy_from(&bx);
                    } else {
                        row_z[0] = 0.5 * row_x[0] + ind(row_x[0]);
                        row_z[1] = -0.5 * row_x[2] + ind(row_x[3]);
                        row_z[2] = ind(row_x[3]);
                        for k in 3..6 {
                            row_z[k] = bx[k];
                        }
                    }
                    for k in 0..p_z {
                        row_z[k] += noise_z * self.sigma_z * normal(r);
                    }
                }
                Setting::Low2 | Setting::Low4 => {
                    row_z = DVector::from_fn(p_z, |_, _| r.random_range(-1.0..=1.0));
                    let bz = &self.b * &row_z;
                    if self.setting == Setting::Low2 {
                        row_x.copy_from(&bz);
                    } else {
                        row_x[0] = 0.5 * row_z[0] + ind(row_z[0]);
                        row_x[1] = -0.5 * row_z[2] + ind(row_z[3]);
                        row_x[2] = ind(row_z[3]);
                        row_x[3] = bz[3];
                    }
                    for k in 0..p_x {
                        row_x[k] += noise_z * self.sigma_z * normal(r);
                    }
                }
                Setting::High1 | Setting::High2 | Setting::Remark1 => {
                    let sx = if self.setting == Setting::Remark1 { self.sigma_x } else { 1.0 };
                    row_x = DVector::from_fn(p_x, |_, _| sx * normal(r));
                    row_z = &self.b * &row_x;
                    for k in 0..p_z {
                        row_z[k] += noise_z * self.sigma_z * normal(r);
                    }
                }
            }
            let mut yi = row_z.dot(&self.gamma) + row_x.dot(&self.gamma_tilde);
            yi += noise_y * self.sigma_y * normal(r);
            x.set_row(i, &row_x.transpose());
            z.set_row(i, &row_z.transpose());
            y[i] = yi;
        }
        (x, z, y)
    }

    fn theta_star(&self) -> Result<Option<DVector<f64>>> {
        Ok(match self.setting {
            Setting::Low1 | Setting::High1 | Setting::Remark1 => Some(self.b.tr_mul(&self.gamma)),
            Setting::High2 => Some(self.b.tr_mul(&self.gamma) + &self.gamma_tilde),
            Setting::Low2 => {
                // Var(Z) = I/3 for Unif[−1,1] entries
                let sigma = &self.b * self.b.transpose() / 3.0
                    + DMatrix::identity(self.p_x, self.p_x) * self.sigma_z.powi(2);
                Some(spd_solve(&sigma, &(&self.b * &self.gamma / 3.0))?)
            }
            Setting::Low3 | Setting::Low4 => None,
        })
    }

    /// `E[X | Z]` and `E[Y | Z]` for the Gaussian designs.
    fn oracle_means(&self, z: &DMatrix<f64>) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        let sx2 = match self.setting {
            Setting::High1 | Setting::High2 => 1.0,
            Setting::Remark1 => self.sigma_x.powi(2),
            _ => return Ok(None),
        };
        if self.sigma_z <= 0.0 {
            return Ok(None);
        }
        // E[X | Z] = Σ_x Bᵀ (B Σ_x Bᵀ + σ² I)⁻¹ Z
        let cov_z = &self.b * self.b.transpose() * sx2 + DMatrix::identity(self.p_z, self.p_z) * self.sigma_z.powi(2);
        let a = self.b.transpose() * sx2 * spd_inverse(&cov_z)?;
        let mu_x = z * a.transpose();
        let mu_y = z * &self.gamma + &mu_x * &self.gamma_tilde;
        Ok(Some((mu_x, mu_y)))
    }
}

fn normal(r: &mut StreamRng) -> f64 {
    StandardNormal.sample(r)
}

fn pair_rows(n: usize, rho: f64) -> usize {
    (rho * n as f64).round() as usize
}

/// Draws replicate `replicate` of the study described by `config`. The
/// design (`B`, `γ`, `γ̃`) comes from the study seed; rows come from a
/// stream indexed by the replicate.
pub fn generate(config: &SimConfig, replicate: u64) -> Result<Generated> {
    let design = Design::new(config)?;
    let mut r = rng::stream(config.seed, replicate + 1);
    let (x, z, y) = design.draw(&mut r, config.n, 1.0, 1.0);
    let (xt, zt, yt) = design.draw(&mut r, config.n_test, 1.0, 1.0);
    let oracle = design
        .oracle_means(&z)?
        .map(|(mx, my)| CrossFitPredictions::oracle(mx, my))
        .transpose()?;
    let train = Dataset::triples(x, z, y)?;
    let fusion = match config.rho {
        Some(rho) if pair_rows(config.n, rho) > 0 => {
            let m = pair_rows(config.n, rho);
            let (xa, za, _) = design.draw(&mut r, m, 1.0, 1.0);
            let (_, zb, yb) = design.draw(&mut r, m, 1.0, 1.0);
            Some(FusionDataset::new(
                Some(train.clone()),
                Some(Dataset::new(Some(xa), Some(za), None)?),
                Some(Dataset::new(None, Some(zb), Some(yb))?),
            )?)
        }
        _ => None,
    };
    Ok(Generated {
        train,
        fusion,
        test: Dataset::triples(xt, zt, yt)?,
        theta_star: design.theta_star()?,
        oracle,
    })
}

/// Closed-form `θ*`, or `None` for the nonlinear settings.
pub fn analytic_theta_star(config: &SimConfig) -> Result<Option<DVector<f64>>> {
    Design::new(config)?.theta_star()
}

/// Population OLS coefficient from a large sample, with its Monte Carlo
/// standard error from batch means.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleTheta {
    pub theta: Vec<f64>,
    pub mc_se: Vec<f64>,
    pub n_oracle: usize,
}

/// `θ* = E[XXᵀ]⁻¹ E[XY]` estimated from `n_oracle` draws accumulated in
/// batches. Noise that enters downstream of `X` is switched off since it
/// leaves `θ*` unchanged; the result depends only on the config.
pub fn numeric_theta_star(config: &SimConfig, n_oracle: usize) -> Result<OracleTheta> {
    if n_oracle < ORACLE_BATCHES {
        return Err(Error::invalid(format!("n_oracle must be at least {ORACLE_BATCHES}")));
    }
    let design = Design::new(config)?;
    let noise_z = if design.setting.x_causes_z() { 0.0 } else { 1.0 };
    let p = design.p_x;
    let base = n_oracle / ORACLE_BATCHES;
    let key = rng::derive_seed(config.seed, ORACLE_LABEL);
    let moments: Vec<(DMatrix<f64>, DVector<f64>)> = (0..ORACLE_BATCHES)
        .into_par_iter()
        .map(|batch| {
            let rows = base + usize::from(batch < n_oracle % ORACLE_BATCHES);
            let mut r = rng::stream(key, batch as u64);
            let mut xx = DMatrix::zeros(p, p);
            let mut xy = DVector::zeros(p);
            let mut left = rows;
            while left > 0 {
                let chunk = left.min(4096);
                let (x, _, y) = design.draw(&mut r, chunk, noise_z, 0.0);
                xx += x.tr_mul(&x);
                xy += x.tr_mul(&y);
                left -= chunk;
            }
            (xx, xy)
        })
        .collect();
    let mut xx = DMatrix::zeros(p, p);
    let mut xy = DVector::zeros(p);
    for (a, b) in &moments {
        xx += a;
        xy += b;
    }
    let theta = spd_solve(&xx, &xy)?;
    let batch_thetas: Vec<DVector<f64>> = moments
        .iter()
        .map(|(a, b)| spd_solve(a, b))
        .collect::<Result<_>>()?;
    let nb = ORACLE_BATCHES as f64;
    let mc_se = (0..p)
        .map(|j| {
            let mean = batch_thetas.iter().map(|t| t[j]).sum::<f64>() / nb;
            let var = batch_thetas.iter().map(|t| (t[j] - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            (var / nb).sqrt()
        })
        .collect();
    Ok(OracleTheta {
        theta: theta.iter().copied().collect(),
        mc_se,
        n_oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_low1_has_exact_linear_response() {
        let mut c = SimConfig::new(Setting::Low1).with_seed(2);
        c.sigma_y = 0.0;
        c.sigma_z = 0.0;
        let g = generate(&c, 0).unwrap();
        let gamma = DVector::from_row_slice(&[0.531, -0.126, 0.312, 0.0, 0.0, 0.0]);
        let resid = g.train.y().unwrap() - g.train.z().unwrap() * gamma;
        assert!(resid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn high1_theta_star_counts_active_entries() {
        let c = SimConfig::new(Setting::High1).with_seed(5).realize().unwrap();
        let g = generate(&c, 0).unwrap();
        let theta = g.theta_star.unwrap();
        let b = c.b_matrix().unwrap();
        assert!(theta.iter().filter(|&&v| v != 0.0).count() <= 10);
        for j in 0..100 {
            let active = b.column(j).iter().take(10).filter(|&&v| v != 0.0).count() as f64;
            assert!((theta[j] - 0.25 * 0.5 * active).abs() < 1e-15);
        }
    }

    #[test]
    fn replicates_differ_but_design_is_shared() {
        let c = SimConfig::new(Setting::Low2).with_seed(1);
        let a = generate(&c, 0).unwrap();
        let b = generate(&c, 1).unwrap();
        assert_ne!(a.train.x().unwrap(), b.train.x().unwrap());
        assert_eq!(a.theta_star, b.theta_star);
        assert_eq!(generate(&c, 1).unwrap().train.y().unwrap(), b.train.y().unwrap());
    }

    #[test]
    fn fusion_blocks_follow_rho() {
        let mut c = SimConfig::new(Setting::Low1);
        c.rho = Some(0.5);
        let g = generate(&c, 0).unwrap();
        let fd = g.fusion.unwrap();
        assert_eq!((fd.n(), fd.n_xz(), fd.n_yz()), (200, 100, 100));
    }

    #[test]
    fn numeric_oracle_is_deterministic_and_zero_for_pure_noise() {
        let mut c = SimConfig::new(Setting::Low1).with_seed(4);
        c.gamma = Some(vec![0.0; 6]);
        let t = numeric_theta_star(&c, 2000).unwrap();
        assert!(t.theta.iter().zip(&t.mc_se).all(|(v, se)| v.abs() <= 3.0 * se + 1e-300));
        assert_eq!(t, numeric_theta_star(&c, 2000).unwrap());
    }
}
