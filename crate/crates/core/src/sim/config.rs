use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Data-generating process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// `X ~ Unif[−1,1]`, `Z = BX + ε_z`, `Y = Zᵀγ + ε_y`.
    Low1,
    /// `Z ~ Unif[−1,1]`, `X = BZ + ε_z`, `Y = Zᵀγ + ε_y`.
    Low2,
    /// `X ~ Unif[−1,1]`, `Z = f(X) + ε_z`, `Y = Zᵀγ + ε_y`.
    Low3,
    /// `Z ~ Unif[−1,1]`, `X = f(Z) + ε_z`, `Y = Zᵀγ + ε_y`.
    Low4,
    /// `X ~ N(0, I)`, sparse `B`, `Y = Zᵀγ + ε_y`.
    High1,
    /// As `high1` plus five direct effects `Xᵀγ̃`.
    High2,
    /// Scalar chain `Z = αX + ε₁`, `Y = βZ + ε₂` with Gaussian `X`.
    Remark1,
}

impl Setting {
    pub fn is_low(self) -> bool {
        matches!(self, Self::Low1 | Self::Low2 | Self::Low3 | Self::Low4)
    }

    pub fn is_high(self) -> bool {
        matches!(self, Self::High1 | Self::High2)
    }

    /// True when `Z` is generated from `X` (so `B` is `p_z × p_x`).
    pub fn x_causes_z(self) -> bool {
        !matches!(self, Self::Low2 | Self::Low4)
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::invalid(format!("unknown setting `{s}`")))
    }
}

const LOW_GAMMA: [f64; 6] = [0.531, -0.126, 0.312, 0.0, 0.0, 0.0];
const LOW_B_NONZERO: usize = 8;
const LOW_B_VALUE: f64 = 0.5;
const HIGH_B_VALUE: f64 = 0.25;
const HIGH_GAMMA_VALUE: f64 = 0.5;
const DIRECT_EFFECTS: usize = 5;
const DIRECT_EFFECT_VALUE: f64 = 0.5;
const DESIGN_STREAM: u64 = 0;

/// Full description of a simulation study. `b`, `gamma` and `gamma_tilde`
/// are drawn from `seed` by [`SimConfig::realize`] when absent and are then
/// fixed for every replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub setting: Setting,
    pub n: usize,
    pub n_test: usize,
    pub sigma_z: f64,
    pub sigma_y: f64,
    pub p_x: usize,
    pub p_z: usize,
    pub s: usize,
    /// Each pair block has `round(rho · n)` rows. No pairs when absent.
    pub rho: Option<f64>,
    pub seed: u64,
    /// Row-major coefficient matrix.
    pub b: Option<Vec<Vec<f64>>>,
    pub gamma: Option<Vec<f64>>,
    pub gamma_tilde: Option<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub sigma_x: f64,
    pub sigma_1: f64,
    pub sigma_2: f64,
    pub crossfit_folds: usize,
    pub cv_folds: usize,
    /// Sample size of the numerical `θ*` oracle.
    pub n_oracle: usize,
}

impl SimConfig {
    pub fn new(setting: Setting) -> Self {
        let (n, p_x, p_z, s, sigma_y) = match setting {
            Setting::High1 | Setting::High2 => (500, 100, 100, 10, 2.0),
            Setting::Remark1 => (2000, 1, 1, 1, 1.0),
            _ => (200, 4, 6, 0, 1.0),
        };
        Self {
            setting,
            n,
            n_test: 1000,
            sigma_z: 1.0,
            sigma_y,
            p_x,
            p_z,
            s,
            rho: None,
            seed: 0,
            b: None,
            gamma: None,
            gamma_tilde: None,
            alpha: 1.0,
            beta: 1.0,
            sigma_x: 1.0,
            sigma_1: 1.0,
            sigma_2: 1.0,
            crossfit_folds: 2,
            cv_folds: if setting.is_high() { 5 } else { 10 },
            n_oracle: 1_000_000,
        }
    }

    /// Parses a JSON object with a required `setting` key; every other key
    /// overrides the setting's default.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::invalid("simulation config must be a JSON object"))?;
        let setting: Setting = obj
            .get("setting")
            .ok_or_else(|| Error::invalid("simulation config needs a `setting`"))
            .and_then(|s| serde_json::from_value(s.clone()).map_err(Error::from))?;
        let mut merged = serde_json::to_value(Self::new(setting))?;
        let target = merged.as_object_mut().expect("config serializes to an object");
        for (k, v) in obj {
            if !target.contains_key(k) {
                return Err(Error::invalid(format!("unknown config key `{k}`")));
            }
            target.insert(k.clone(), v.clone());
        }
        let config: Self = serde_json::from_value(merged)?;
        config.validate()?;
        Ok(config)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        for (name, v) in [
            ("sigma_z", self.sigma_z),
            ("sigma_y", self.sigma_y),
            ("sigma_x", self.sigma_x),
            ("sigma_1", self.sigma_1),
            ("sigma_2", self.sigma_2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return bad("alpha and beta must be finite".into());
        }
        if self.n < 2 || self.n_test < 1 {
            return bad("need n ≥ 2 and n_test ≥ 1".into());
        }
        if self.crossfit_folds < 2 || self.cv_folds < 2 {
            return bad("fold counts must be at least 2".into());
        }
        if let Some(rho) = self.rho {
            if !(rho.is_finite() && rho >= 0.0) {
                return bad("rho must be non-negative".into());
            }
        }
        match self.setting {
            s if s.is_low() => {
                if (self.p_x, self.p_z) != (4, 6) {
                    return Err(Error::shape("low-dimensional settings use p_x = 4, p_z = 6"));
                }
            }
            Setting::Remark1 => {
                if (self.p_x, self.p_z) != (1, 1) {
                    return Err(Error::shape("remark1 uses p_x = p_z = 1"));
                }
            }
            s => {
                if self.s == 0 || self.s > self.p_x || 2 * self.s > self.p_z {
                    return Err(Error::shape("high-dimensional settings need 1 ≤ s ≤ p_x and 2s ≤ p_z"));
                }
                if s == Setting::High2 && self.p_x < self.s + DIRECT_EFFECTS {
                    return Err(Error::shape("high2 needs p_x ≥ s + 5"));
                }
            }
        }
        let (rows, cols) = self.b_shape();
        if let Some(b) = &self.b {
            if b.len() != rows || b.iter().any(|r| r.len() != cols) {
                return Err(Error::shape(format!("b must be {rows} × {cols}")));
            }
        }
        if let Some(g) = &self.gamma {
            if g.len() != self.p_z {
                return Err(Error::shape("gamma must have length p_z"));
            }
        }
        if let Some(g) = &self.gamma_tilde {
            if g.len() != self.p_x {
                return Err(Error::shape("gamma_tilde must have length p_x"));
            }
        }
        Ok(())
    }

    /// Shape of `B`: `p_z × p_x` when `Z` depends on `X`, else `p_x × p_z`.
    pub fn b_shape(&self) -> (usize, usize) {
        if self.setting.x_causes_z() {
            (self.p_z, self.p_x)
        } else {
            (self.p_x, self.p_z)
        }
    }

    /// Fills `b`, `gamma` and `gamma_tilde` from the study seed.
    pub fn realize(&self) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        let mut r = rng::stream(self.seed, DESIGN_STREAM);
        let (rows, cols) = self.b_shape();
        let b_drawn = match self.setting {
            s if s.is_low() => {
                let mut b = vec![vec![0.0; cols]; rows];
                for k in sample(&mut r, rows * cols, LOW_B_NONZERO) {
                    b[k / cols][k % cols] = LOW_B_VALUE;
                }
                b
            }
            Setting::Remark1 => vec![vec![self.alpha]],
            _ => {
                let mut b = vec![vec![0.0; cols]; rows];
                for j in 0..self.s {
                    for i in sample(&mut r, rows, 2 * self.s) {
                        b[i][j] = HIGH_B_VALUE;
                    }
                }
                b
            }
        };
        let gamma_tilde_drawn = if self.setting == Setting::High2 {
            let mut g = vec![0.0; self.p_x];
            for i in sample(&mut r, self.p_x - self.s, DIRECT_EFFECTS) {
                g[self.s + i] = DIRECT_EFFECT_VALUE;
            }
            g
        } else {
            vec![0.0; self.p_x]
        };
        out.b.get_or_insert(b_drawn);
        out.gamma.get_or_insert_with(|| match self.setting {
            s if s.is_low() => LOW_GAMMA.to_vec(),
            Setting::Remark1 => vec![self.beta],
            _ => (0..self.p_z).map(|i| if i < self.s { HIGH_GAMMA_VALUE } else { 0.0 }).collect(),
        });
        out.gamma_tilde.get_or_insert(gamma_tilde_drawn);
        Ok(out)
    }

    pub(crate) fn b_matrix(&self) -> Result<DMatrix<f64>> {
        let b = self.b.as_ref().ok_or_else(|| Error::invalid("config is not realized"))?;
        let (rows, cols) = self.b_shape();
        Ok(DMatrix::from_fn(rows, cols, |i, j| b[i][j]))
    }
}
