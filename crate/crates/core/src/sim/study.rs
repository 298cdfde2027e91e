use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::dgp::{analytic_theta_star, generate, numeric_theta_star, Generated};
use crate::data::{split_folds, FusionDataset};
use crate::error::{Error, Result};
use crate::fusion::{fusion_fit, proxy_cross_term_part};
use crate::highdim::{
    lasso, learn_structure, modular_lasso, proxy_cross_term_struct, structure_penalty, StructureMode,
};
use crate::learners::{fmt_f64, LassoCv, Learner, MeanLearner, Ols, PenaltyConfig, RidgeCv};
use crate::modular::{crossfit_means, modular_ols, ols, proxy_cross_term_lm, CrossFitPredictions, ModularFit};
use crate::rng;

/// Source of the conditional means `μ̂_x`, `μ̂_y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plugin {
    /// `μ̂_x(Z_i) = X_i`, `μ̂_y(Z_i) = Y_i`.
    Identity,
    /// True conditional means of the generating process.
    Oracle,
    Linear,
    RidgeCv,
    LassoCv,
    Mean,
}

impl Plugin {
    fn as_str(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Oracle => "oracle",
            Self::Linear => "linear",
            Self::RidgeCv => "ridge-cv",
            Self::LassoCv => "lasso-cv",
            Self::Mean => "mean",
        }
    }

    /// Cross-fitting learner, or `None` for identity and oracle.
    pub fn learner(self, seed: u64) -> Option<Box<dyn Learner>> {
        match self {
            Self::Identity | Self::Oracle => None,
            Self::Linear => Some(Box::new(Ols { intercept: true })),
            Self::RidgeCv => Some(Box::new(RidgeCv { seed, ..RidgeCv::default() })),
            Self::LassoCv => Some(Box::new(LassoCv { seed, ..LassoCv::default() })),
            Self::Mean => Some(Box::new(MeanLearner)),
        }
    }
}

impl std::str::FromStr for Plugin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::invalid(format!("unknown plug-in `{s}`")))
    }
}

/// An estimator in a simulation study.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    Ols,
    ModOls {
        plugin: Plugin,
    },
    Lasso,
    ModLasso {
        plugin: Plugin,
        #[serde(default)]
        structure: bool,
    },
    /// Triples plus pair blocks; requires `rho` in the config.
    Fusion {
        plugin: Plugin,
        #[serde(default)]
        penalized: bool,
    },
}

impl EstimatorSpec {
    /// Stable label, e.g. `mod-lasso[ridge-cv,struct]`. Parsed back by
    /// `FromStr`.
    pub fn label(&self) -> String {
        match self {
            Self::Ols => "ols".into(),
            Self::Lasso => "lasso".into(),
            Self::ModOls { plugin } => format!("mod-ols[{}]", plugin.as_str()),
            Self::ModLasso { plugin, structure } => {
                let tail = if *structure { ",struct" } else { "" };
                format!("mod-lasso[{}{tail}]", plugin.as_str())
            }
            Self::Fusion { plugin, penalized } => {
                let tail = if *penalized { ",penalized" } else { "" };
                format!("fusion[{}{tail}]", plugin.as_str())
            }
        }
    }

    fn run(&self, g: &Generated, config: &SimConfig, seed: u64) -> Result<ModularFit> {
        let d = &g.train;
        let penalty = PenaltyConfig::default().with_folds(config.cv_folds);
        let folds = || split_folds(d.n(), config.crossfit_folds, seed);
        let means = |plugin: Plugin| -> Result<CrossFitPredictions> {
            match plugin {
                Plugin::Identity => CrossFitPredictions::identity(d),
                Plugin::Oracle => g
                    .oracle
                    .clone()
                    .ok_or_else(|| Error::invalid("this setting has no closed-form conditional means")),
                p => {
                    let l = p.learner(seed).expect("learner plug-in");
                    crossfit_means(d, l.as_ref(), l.as_ref(), &folds()?)
                }
            }
        };
        match self {
            Self::Ols => ols(d),
            Self::Lasso => lasso(d, &penalty, seed),
            Self::ModOls { plugin } => modular_ols(d, &proxy_cross_term_lm(d, &means(*plugin)?)?),
            Self::ModLasso { plugin, structure: false } => {
                modular_lasso(d, &proxy_cross_term_lm(d, &means(*plugin)?)?, &penalty, seed)
            }
            Self::ModLasso { plugin, structure: true } => {
                let l = plugin
                    .learner(seed)
                    .ok_or_else(|| Error::invalid("structure learning needs a learner plug-in"))?;
                let sp = structure_penalty().with_folds(config.cv_folds);
                let partition = learn_structure(d, &sp, seed)?;
                let c = proxy_cross_term_struct(
                    d,
                    &partition,
                    l.as_ref(),
                    l.as_ref(),
                    &folds()?,
                    StructureMode::FullConditioning,
                )?;
                modular_lasso(d, &c, &penalty, seed)
            }
            Self::Fusion { plugin, penalized } => {
                let l = plugin
                    .learner(seed)
                    .ok_or_else(|| Error::invalid("fusion needs a learner plug-in"))?;
                let fd = g.fusion.clone().unwrap_or_else(|| FusionDataset::from(d.clone()));
                let c = proxy_cross_term_part(&fd, l.as_ref(), l.as_ref(), seed)?;
                fusion_fit(&fd, &c, penalized.then_some(&penalty), seed)
            }
        }
    }
}

impl std::str::FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse estimator `{s}`"));
        let (method, args) = match s.split_once('[') {
            Some((m, rest)) => (m, rest.strip_suffix(']').ok_or_else(bad)?),
            None => (s, ""),
        };
        let mut parts = args.split(',').filter(|a| !a.is_empty());
        let plugin = parts.next().map(str::parse::<Plugin>).transpose()?;
        let flag = parts.next();
        if parts.next().is_some() {
            return Err(bad());
        }
        let spec = match (method, plugin, flag) {
            ("ols", None, None) => Self::Ols,
            ("lasso", None, None) => Self::Lasso,
            ("mod-ols", Some(plugin), None) => Self::ModOls { plugin },
            ("mod-lasso", Some(plugin), f @ (None | Some("struct"))) => Self::ModLasso {
                plugin,
                structure: f.is_some(),
            },
            ("fusion", Some(plugin), f @ (None | Some("penalized"))) => Self::Fusion {
                plugin,
                penalized: f.is_some(),
            },
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

/// Metrics of one successful fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitMetrics {
    pub theta: Vec<f64>,
    /// `(1/n_test) Σ (X_iᵀθ̂ − X_iᵀθ*)²`
    pub excess_risk: f64,
    /// `(1/n_test) Σ (Y_i − X_iᵀθ̂)²`
    pub mse: f64,
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: String,
    pub outcome: std::result::Result<FitMetrics, String>,
    pub runtime_ms: f64,
}

/// Aggregates for one estimator over its successful replicates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub rmse: Vec<f64>,
    pub bias: Vec<f64>,
    /// Population convention, so `rmse² = bias² + sd²`.
    pub sd: Vec<f64>,
    pub mean_excess_risk: f64,
    pub mean_mse: f64,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    /// Realized config, including `b`.
    pub config: SimConfig,
    pub theta_star: Vec<f64>,
    /// Present when `θ*` came from the numerical oracle.
    pub theta_star_mc_se: Option<Vec<f64>>,
    pub estimators: Vec<String>,
    pub n_replicates: usize,
    /// Replicate-major, estimators in the order given.
    pub records: Vec<ReplicateRecord>,
}

/// `θ*` for a realized config: closed form where available, otherwise the
/// numerical oracle with its Monte Carlo standard error.
pub fn study_theta_star(config: &SimConfig) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    match analytic_theta_star(config)? {
        Some(t) => Ok((t.iter().copied().collect(), None)),
        None => {
            let o = numeric_theta_star(config, config.n_oracle)?;
            Ok((o.theta, Some(o.mc_se)))
        }
    }
}

/// Runs every estimator on `n_replicates` draws. Replicate `r` draws its
/// data from stream `r + 1` of the study seed and hands every estimator the
/// same fold seed, so results do not depend on `parallelism`.
pub fn run_study(
    config: &SimConfig,
    estimators: &[EstimatorSpec],
    n_replicates: usize,
    parallelism: usize,
) -> Result<SimResult> {
    run_study_with(config, estimators, n_replicates, parallelism, None)
}

/// [`run_study`] with a callback invoked as each replicate finishes.
pub fn run_study_with(
    config: &SimConfig,
    estimators: &[EstimatorSpec],
    n_replicates: usize,
    parallelism: usize,
    on_replicate: Option<&(dyn Fn(usize, &[ReplicateRecord]) + Sync)>,
) -> Result<SimResult> {
    if n_replicates < 2 {
        return Err(Error::invalid("a study needs at least 2 replicates"));
    }
    if parallelism == 0 {
        return Err(Error::invalid("parallelism must be at least 1"));
    }
    if estimators.is_empty() {
        return Err(Error::invalid("no estimators given"));
    }
    let config = config.realize()?;
    let (theta_star, mc_se) = study_theta_star(&config)?;
    let theta_vec = DVector::from_vec(theta_star.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let per_replicate: Vec<Vec<ReplicateRecord>> = pool.install(|| {
        (0..n_replicates)
            .into_par_iter()
            .map(|r| -> Result<Vec<ReplicateRecord>> {
                let g = generate(&config, r as u64)?;
                let seed = rng::derive_seed(config.seed, r as u64 + 1);
                let records: Vec<ReplicateRecord> = estimators
                    .iter()
                    .map(|spec| {
                        let start = Instant::now();
                        let outcome = spec
                            .run(&g, &config, seed)
                            .and_then(|fit| metrics(&g, &fit, &theta_vec))
                            .map_err(|e| e.to_string());
                        ReplicateRecord {
                            replicate: r,
                            estimator: spec.label(),
                            outcome,
                            runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                        }
                    })
                    .collect();
                if let Some(f) = on_replicate {
                    f(r, &records);
                }
                Ok(records)
            })
            .collect::<Result<_>>()
    })?;
    Ok(SimResult {
        config,
        theta_star,
        theta_star_mc_se: mc_se,
        estimators: estimators.iter().map(EstimatorSpec::label).collect(),
        n_replicates,
        records: per_replicate.into_iter().flatten().collect(),
    })
}

fn metrics(g: &Generated, fit: &ModularFit, theta_star: &DVector<f64>) -> Result<FitMetrics> {
    let xt = g.test.x()?;
    let yt = g.test.y()?;
    if fit.theta.len() != theta_star.len() {
        return Err(Error::shape("fit and θ* differ in length"));
    }
    let pred = xt * &fit.theta;
    let gap = xt * (&fit.theta - theta_star);
    let m = xt.nrows() as f64;
    Ok(FitMetrics {
        theta: fit.theta.iter().copied().collect(),
        excess_risk: gap.norm_squared() / m,
        mse: (yt - pred).norm_squared() / m,
        lambda: fit.lambda,
    })
}

impl SimResult {
    pub fn failure_count(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn summaries(&self) -> Vec<EstimatorSummary> {
        let p = self.theta_star.len();
        self.estimators
            .iter()
            .map(|name| {
                let mine: Vec<&ReplicateRecord> = self.records.iter().filter(|r| &r.estimator == name).collect();
                let ok: Vec<&FitMetrics> = mine.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
                let k = ok.len() as f64;
                let mean = |f: &dyn Fn(&FitMetrics) -> f64| ok.iter().map(|m| f(m)).sum::<f64>() / k;
                let bias: Vec<f64> = (0..p).map(|j| mean(&|m| m.theta[j] - self.theta_star[j])).collect();
                let rmse = (0..p)
                    .map(|j| mean(&|m| (m.theta[j] - self.theta_star[j]).powi(2)).sqrt())
                    .collect();
                let sd = (0..p)
                    .map(|j| mean(&|m| (m.theta[j] - self.theta_star[j] - bias[j]).powi(2)).sqrt())
                    .collect();
                EstimatorSummary {
                    estimator: name.clone(),
                    n_ok: ok.len(),
                    n_failed: mine.len() - ok.len(),
                    rmse,
                    bias,
                    sd,
                    mean_excess_risk: mean(&|m| m.excess_risk),
                    mean_mse: mean(&|m| m.mse),
                }
            })
            .collect()
    }

    /// One row per replicate and estimator. Runtime is excluded so that
    /// the file is a pure function of the inputs.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let p = self.theta_star.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["replicate", "estimator", "status", "excess_risk", "mse", "lambda"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=p).map(|j| format!("theta_{j}")));
        header.push("error".into());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.replicate.to_string(), r.estimator.clone()];
            match &r.outcome {
                Ok(m) => {
                    row.push("ok".into());
                    row.push(fmt_f64(m.excess_risk));
                    row.push(fmt_f64(m.mse));
                    row.push(m.lambda.map(fmt_f64).unwrap_or_default());
                    row.extend(m.theta.iter().map(|&v| fmt_f64(v)));
                    row.push(String::new());
                }
                Err(e) => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat_n(String::new(), 3 + p));
                    row.push(e.clone());
                }
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "estimator", "runtime_ms"])?;
        for r in &self.records {
            w.write_record([r.replicate.to_string(), r.estimator.clone(), format!("{:.3}", r.runtime_ms)])?;
        }
        w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        let value = serde_json::json!({
            "config": self.config,
            "n_replicates": self.n_replicates,
            "theta_star": self.theta_star,
            "theta_star_mc_se": self.theta_star_mc_se,
            "failures": self.failure_count(),
            "estimators": self.summaries(),
        });
        Ok(serde_json::to_string_pretty(&value)?)
    }

    /// Writes `replicates.csv`, `summary.json` and `timing.csv` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path, e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let open = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path).map_err(|e| io(&path, e))
        };
        self.write_csv(open("replicates.csv")?)?;
        self.write_timing_csv(open("timing.csv")?)?;
        let path = dir.join("summary.json");
        std::fs::write(&path, self.summary_json()? + "\n").map_err(|e| io(&path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Setting;

    fn small(setting: Setting) -> SimConfig {
        let mut c = SimConfig::new(setting).with_seed(7);
        c.n = 60;
        c.n_test = 50;
        c
    }

    #[test]
    fn labels_round_trip() {
        for s in [
            "ols",
            "lasso",
            "mod-ols[identity]",
            "mod-lasso[ridge-cv,struct]",
            "mod-lasso[oracle]",
            "fusion[linear,penalized]",
        ] {
            assert_eq!(s.parse::<EstimatorSpec>().unwrap().label(), s);
        }
        assert!("mod-ols".parse::<EstimatorSpec>().is_err());
        assert!("ols[linear]".parse::<EstimatorSpec>().is_err());
    }

    #[test]
    fn identity_plugin_matches_ols_per_replicate() {
        let specs = [EstimatorSpec::Ols, EstimatorSpec::ModOls { plugin: Plugin::Identity }];
        let res = run_study(&small(Setting::Low1), &specs, 3, 2).unwrap();
        for pair in res.records.chunks(2) {
            assert_eq!(pair[0].outcome.as_ref().unwrap().theta, pair[1].outcome.as_ref().unwrap().theta);
        }
        let s = res.summaries();
        assert_eq!(s[0].rmse, s[1].rmse);
    }

    #[test]
    fn aggregation_identity_holds() {
        let specs = [EstimatorSpec::ModOls { plugin: Plugin::Linear }];
        let res = run_study(&small(Setting::Low2), &specs, 5, 1).unwrap();
        let s = &res.summaries()[0];
        for j in 0..4 {
            assert!((s.rmse[j].powi(2) - s.bias[j].powi(2) - s.sd[j].powi(2)).abs() <= 1e-10);
        }
    }

    #[test]
    fn csv_has_one_row_per_replicate_and_estimator() {
        let specs = [EstimatorSpec::Ols, EstimatorSpec::ModOls { plugin: Plugin::Oracle }];
        let res = run_study(&small(Setting::Low1), &specs, 2, 1).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        // low1 has no closed-form E[X | Z]; the failure is recorded, not fatal
        assert_eq!(res.failure_count(), 2);
        assert!(text.contains("failed"));
    }

    #[test]
    fn numeric_theta_star_used_for_nonlinear_settings() {
        let mut c = small(Setting::Low3);
        c.n_oracle = 20_000;
        let res = run_study(&c, &[EstimatorSpec::Ols], 2, 1).unwrap();
        assert!(res.theta_star_mc_se.is_some());
    }
}
