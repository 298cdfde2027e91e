use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use modreg_core::highdim::{learn_structure, learn_structure_honest, proxy_cross_term_struct};
use modreg_core::sim::{run_study_with, EstimatorSpec, ReplicateRecord, Setting, SimConfig};
use modreg_core::{
    crossfit_means, fusion_fit, lasso, load_csv, load_fusion, modular_glm, modular_lasso, modular_ols,
    proxy_cross_term_identity, proxy_cross_term_lm, proxy_cross_term_miss, proxy_cross_term_part,
    proxy_cross_term_part_struct, split_folds, structure_penalty, CrossFitPredictions, CvRule, Dataset,
    Error, GlmFamily, LassoCv, Learner, MeanLearner, ModularFit, Ols, PenaltyConfig, ProxyCrossTerm,
    Ridge, RidgeCv, Schema, StructureMode,
};

use crate::{
    effective_seed, CliError, Common, FamilyArg, FitArgs, FuseArgs, LearnerArg, Method, PluginArg,
    RuleArg, SimulateArgs, StructureArg,
};

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io { path: path.to_path_buf(), source })
}

fn learner(c: &Common, seed: u64) -> CliResult<Box<dyn Learner>> {
    if c.ridge_eta.is_some() && c.learner != LearnerArg::Ridge {
        return Err(usage("--ridge-eta applies only to --learner ridge"));
    }
    Ok(match (c.learner, c.ridge_eta) {
        (LearnerArg::Linear, _) => Box::new(Ols { intercept: true }),
        (LearnerArg::Ridge, Some(eta)) => {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(usage("--ridge-eta must be a non-negative number"));
            }
            Box::new(Ridge { eta, intercept: true })
        }
        (LearnerArg::Ridge | LearnerArg::RidgeCv, _) => Box::new(RidgeCv { seed, ..RidgeCv::default() }),
        (LearnerArg::Lasso, _) => Box::new(LassoCv { seed, ..LassoCv::default() }),
        (LearnerArg::Mean, _) => Box::new(MeanLearner),
    })
}

fn penalty(c: &Common) -> CliResult<PenaltyConfig> {
    if c.cv_folds < 2 {
        return Err(usage("--cv-folds must be at least 2"));
    }
    let rule = match c.rule {
        RuleArg::Min => CvRule::Min,
        RuleArg::OneSe => CvRule::OneSe,
    };
    Ok(PenaltyConfig::default().with_folds(c.cv_folds).with_rule(rule))
}

fn check_folds(c: &Common) -> CliResult<()> {
    if c.folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    Ok(())
}

fn family(f: FamilyArg) -> GlmFamily {
    match f {
        FamilyArg::Gaussian => GlmFamily::Gaussian,
        FamilyArg::Logistic => GlmFamily::Logistic,
        FamilyArg::Poisson => GlmFamily::Poisson,
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn default_path_out(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".path.csv");
    out.with_file_name(name)
}

/// Writes the fit JSON and, for penalized fits, the path CSV.
fn emit(fit: &ModularFit, c: &Common) -> CliResult<()> {
    let json = fit.to_json().map_err(Error::from)? + "\n";
    match &c.out {
        Some(path) => write_text(path, &json)?,
        None => print!("{json}"),
    }
    if let Some(path) = &fit.path {
        let target = c.path_out.clone().or_else(|| c.out.as_deref().map(default_path_out));
        if let Some(target) = target {
            let file = File::create(&target).map_err(|e| io_error(&target, e))?;
            path.write_csv(file)?;
        }
    }
    Ok(())
}

pub fn fit(a: FitArgs) -> CliResult<()> {
    let c = &a.common;
    let seed = effective_seed(Some(c.seed))?.unwrap_or(0);
    check_folds(c)?;
    let modular = matches!(a.method, Method::ModOls | Method::ModGlm | Method::ModLasso);
    if !modular && a.plugin != PluginArg::Crossfit {
        return Err(usage("--plugin applies only to modular methods"));
    }
    if c.structure != StructureArg::None && !matches!(a.method, Method::ModOls | Method::ModLasso) {
        return Err(usage("--structure applies to mod-ols and mod-lasso"));
    }
    if c.structure != StructureArg::None && a.plugin == PluginArg::Identity {
        return Err(usage("--structure needs cross-fitted learners"));
    }
    let cfg = penalty(c)?;
    let schema = Schema::load(&c.schema)?;
    let mut d = load_csv(&a.data, &schema)?;

    let l = learner(c, seed)?;
    let cross_term = |d: &Dataset| -> Result<ProxyCrossTerm, Error> {
        let folds = split_folds(d.n(), c.folds, seed)?;
        let preds = crossfit_means(d, l.as_ref(), l.as_ref(), &folds)?;
        proxy_cross_term_lm(d, &preds)
    };
    let ct: ProxyCrossTerm = if !modular {
        proxy_cross_term_identity(&d)?
    } else if a.plugin == PluginArg::Identity {
        proxy_cross_term_lm(&d, &CrossFitPredictions::identity(&d)?)?
    } else {
        let sp = structure_penalty().with_folds(c.cv_folds);
        let partition = match c.structure {
            StructureArg::None => None,
            StructureArg::Learn => Some(learn_structure(&d, &sp, seed)?),
            StructureArg::LearnHonest => {
                let (p, rows) = learn_structure_honest(&d, &sp, seed)?;
                d = d.subset(&rows)?;
                Some(p)
            }
        };
        match partition {
            None => cross_term(&d)?,
            Some(p) => {
                let folds = split_folds(d.n(), c.folds, seed)?;
                proxy_cross_term_struct(&d, &p, l.as_ref(), l.as_ref(), &folds, StructureMode::FullConditioning)?
            }
        }
    };
    let fit = match a.method {
        Method::Ols | Method::ModOls => modular_ols(&d, &ct)?,
        Method::Glm | Method::ModGlm => modular_glm(&d, &ct, family(a.family), None)?,
        Method::Lasso => lasso(&d, &cfg, seed)?,
        Method::ModLasso => modular_lasso(&d, &ct, &cfg, seed)?,
    };
    emit(&fit, c)
}

pub fn fuse(a: FuseArgs) -> CliResult<()> {
    let c = &a.common;
    let seed = effective_seed(Some(c.seed))?.unwrap_or(0);
    if a.triples.is_none() && a.xz.is_none() && a.zy.is_none() {
        return Err(usage("give at least one of --triples, --xz, --zy"));
    }
    if !matches!(a.method, Method::ModOls | Method::ModLasso) {
        return Err(usage("fuse supports --method mod-ols and mod-lasso"));
    }
    if c.folds != 2 {
        return Err(usage("fusion cross-fitting uses 2 folds"));
    }
    let penalized = if a.method == Method::ModLasso { Some(penalty(c)?) } else { None };
    let schema = Schema::load(&c.schema)?;
    let fd = load_fusion(a.triples.as_deref(), a.xz.as_deref(), a.zy.as_deref(), &schema)?;
    let l = learner(c, seed)?;
    let ct = match c.structure {
        StructureArg::None if fd.n() == 0 => proxy_cross_term_miss(&fd, l.as_ref(), l.as_ref(), seed)?,
        StructureArg::None => proxy_cross_term_part(&fd, l.as_ref(), l.as_ref(), seed)?,
        StructureArg::Learn => {
            let t = fd.triples.as_ref().ok_or_else(|| {
                Error::Unidentifiable("structure learning needs complete triples".into())
            })?;
            let p = learn_structure(t, &structure_penalty().with_folds(c.cv_folds), seed)?;
            proxy_cross_term_part_struct(&fd, &p, l.as_ref(), l.as_ref(), seed)?
        }
        StructureArg::LearnHonest => return Err(usage("fuse supports --structure none or learn")),
    };
    let fit = fusion_fit(&fd, &ct, penalized.as_ref(), seed)?;
    emit(&fit, c)
}

fn default_estimators(setting: Setting) -> Vec<EstimatorSpec> {
    let labels: &[&str] = match setting {
        Setting::High1 => &["lasso", "mod-lasso[ridge-cv]", "mod-lasso[oracle]"],
        Setting::High2 => &["lasso", "mod-lasso[ridge-cv]", "mod-lasso[ridge-cv,struct]"],
        Setting::Remark1 => &["ols", "mod-ols[oracle]", "mod-ols[linear]"],
        _ => &["ols", "mod-ols[lasso-cv]", "mod-ols[ridge-cv]", "mod-ols[linear]"],
    };
    labels.iter().map(|s| s.parse().expect("valid label")).collect()
}

fn parse_estimators(list: &str) -> CliResult<Vec<EstimatorSpec>> {
    list.split(',')
        .scan(String::new(), |pending, piece| {
            // labels such as mod-lasso[ridge-cv,struct] contain commas
            if !pending.is_empty() {
                pending.push(',');
            }
            pending.push_str(piece.trim());
            if pending.matches('[').count() > pending.matches(']').count() {
                Some(None)
            } else {
                Some(Some(std::mem::take(pending)))
            }
        })
        .flatten()
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<EstimatorSpec>().map_err(|e| usage(e.to_string())))
        .collect()
}

pub fn simulate(a: SimulateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| io_error(&a.config, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let from_file = value
        .as_object_mut()
        .and_then(|o| o.remove("estimators"))
        .map(|v| -> CliResult<Vec<EstimatorSpec>> {
            let items = v.as_array().ok_or_else(|| usage("`estimators` must be an array"))?;
            items
                .iter()
                .map(|item| match item {
                    serde_json::Value::String(s) => s.parse().map_err(|e: Error| usage(e.to_string())),
                    other => serde_json::from_value(other.clone()).map_err(|e| usage(e.to_string())),
                })
                .collect()
        })
        .transpose()?;
    let mut config = SimConfig::from_json(&value.to_string())?;
    if let Some(seed) = effective_seed(a.seed)? {
        config.seed = seed;
    }
    let estimators = match (&a.estimators, from_file) {
        (Some(list), _) => parse_estimators(list)?,
        (None, Some(list)) => list,
        (None, None) => default_estimators(config.setting),
    };
    if estimators.is_empty() {
        return Err(usage("no estimators given"));
    }
    if a.replicates < 2 {
        return Err(usage("--replicates must be at least 2"));
    }
    let jobs = match a.jobs {
        Some(0) => return Err(usage("--jobs must be at least 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let log = |r: usize, records: &[ReplicateRecord]| {
        let failed = records.iter().filter(|x| x.outcome.is_err()).count();
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "replicate {}: {} ok, {failed} failed", r + 1, records.len() - failed);
    };
    let result = run_study_with(&config, &estimators, a.replicates, jobs, Some(&log))?;
    result.write_outputs(&a.out)?;
    if result.failure_count() > 0 {
        eprintln!("{} estimator fits failed; see replicates.csv", result.failure_count());
    }
    Ok(())
}
