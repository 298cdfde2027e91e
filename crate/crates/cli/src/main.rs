mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use modreg_core::Error;

/// Modular regression with auxiliary variables.
#[derive(Parser, Debug)]
#[command(name = "modreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a (modular) OLS, GLM or Lasso to one CSV file.
    Fit(FitArgs),
    /// Run a seeded simulation study.
    Simulate(SimulateArgs),
    /// Fit from full triples and/or (X, Z) and (Z, Y) pair files.
    Fuse(FuseArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Ols,
    ModOls,
    Glm,
    ModGlm,
    Lasso,
    ModLasso,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LearnerArg {
    Linear,
    /// Ridge with a fixed `--ridge-eta`, or cross-validated when absent.
    Ridge,
    RidgeCv,
    Lasso,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PluginArg {
    /// Cross-fitted sub-task learners.
    Crossfit,
    /// `μ̂_x = X`, `μ̂_y = Y`: reproduces the classical estimator.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StructureArg {
    None,
    /// Learn `J₂` by a Lasso of Y on (X, Z) over all rows.
    Learn,
    /// Learn `J₂` on one half and estimate on the other.
    LearnHonest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Min,
    #[value(name = "1se")]
    OneSe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Logistic,
    Poisson,
}

/// Options shared by `fit` and `fuse`.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON map from column name to "x", "z", "y" or "ignore".
    #[arg(long)]
    pub schema: PathBuf,
    /// Sub-task learner for E[X | Z] and E[Y | Z].
    #[arg(long, value_enum, default_value = "ridge-cv")]
    pub learner: LearnerArg,
    /// Fixed penalty for `--learner ridge`.
    #[arg(long)]
    pub ridge_eta: Option<f64>,
    /// Number of cross-fitting folds.
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    /// Folds for choosing λ in penalized fits.
    #[arg(long, default_value_t = 10)]
    pub cv_folds: usize,
    /// λ selection rule for penalized fits.
    #[arg(long, value_enum, default_value = "min")]
    pub rule: RuleArg,
    /// Seed for fold assignment; MODREG_SEED overrides it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Structure learning for modular Lasso.
    #[arg(long, value_enum, default_value = "none")]
    pub structure: StructureArg,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Regularization path CSV for penalized fits; defaults to
    /// `<out>.path.csv` when `--out` is given.
    #[arg(long)]
    pub path_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Plug-in for the conditional means of modular methods.
    #[arg(long, value_enum, default_value = "crossfit")]
    pub plugin: PluginArg,
    /// Exponential family for glm and mod-glm.
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Study config: JSON with a `setting` key, optional `estimators`
    /// labels and overrides of any other parameter.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated estimator labels, e.g. `ols,mod-ols[ridge-cv]`.
    /// Overrides the config's list.
    #[arg(long)]
    pub estimators: Option<String>,
    /// Study seed; overrides the config. MODREG_SEED overrides both.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for replicates.csv, summary.json and timing.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// CSV of complete (X, Z, Y) rows.
    #[arg(long)]
    pub triples: Option<PathBuf>,
    /// CSV of (X, Z) rows; a Y column, if any, is ignored.
    #[arg(long)]
    pub xz: Option<PathBuf>,
    /// CSV of (Z, Y) rows; X columns, if any, are ignored.
    #[arg(long)]
    pub zy: Option<PathBuf>,
    /// mod-ols or mod-lasso.
    #[arg(long, value_enum, default_value = "mod-ols")]
    pub method: Method,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) if e.is_numerical() => write!(f, "numerical failure: {e}"),
            CliError::Core(e) => write!(f, "data error: {e}"),
        }
    }
}

/// `MODREG_SEED` when set, else the given seed.
pub fn effective_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    match std::env::var("MODREG_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("MODREG_SEED=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Fuse(a) => commands::fuse(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("modreg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
