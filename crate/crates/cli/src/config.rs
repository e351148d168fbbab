//! Command-line and config-file parsing.
//!
//! A config file holds flat `key = value` lines whose keys are the long flag
//! names of the chosen subcommand (`max-iter = 500`, `lambda1 = 0.3`). Its
//! entries are spliced in front of the real arguments, so anything given on
//! the command line wins.

use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20160;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "sglgg",
    version,
    about = "Sparse group lasso with a group-level graph penalty",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fit one model at fixed penalties.
    Fit(FitArgs),
    /// Repeated k-fold cross-validation over a penalty grid.
    Cv(CvArgs),
    /// Stability selection over random half-samples and a penalty grid.
    Stability(StabilityArgs),
    /// Write a synthetic instance with planted support.
    Simulate(SimulateArgs),
    /// Score a selection against a planted truth.
    Eval(EvalArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Cv(_) => "cv",
            Command::Stability(_) => "stability",
            Command::Simulate(_) => "simulate",
            Command::Eval(_) => "eval",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Fit(a) => &a.common,
            Command::Cv(a) => &a.common,
            Command::Stability(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Eval(a) => &a.common,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads for the selection protocols; results do not depend on it.
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Flat key = value file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Genotype matrix: header `sample_id,<feature ids>`, one row per sample.
    #[arg(long)]
    pub matrix: PathBuf,
    /// Phenotype: `sample_id,value`.
    #[arg(long)]
    pub phenotype: PathBuf,
    /// Feature to group map: `feature_id,group_id`.
    #[arg(long)]
    pub groups: PathBuf,
    /// Group graph: `group_a,group_b,weight`.
    #[arg(long)]
    pub graph: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Sglgg,
    Lasso,
    FusedLasso,
    SparseGroupLasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeightArg {
    Absolute,
    Unit,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Sglgg)]
    pub method: MethodArg,
    /// `auto` (squared spectral norm of the design) or a positive number.
    #[arg(long, default_value = "auto")]
    pub rho: String,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Relative residual tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Absolute residual tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub abs_tol: f64,
    #[arg(long)]
    pub adaptive_rho: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub select_eps: f64,
    #[arg(long, value_enum, default_value_t = EdgeWeightArg::Absolute)]
    pub edge_weight: EdgeWeightArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Group penalty (sglgg, sparse_group_lasso).
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Graph penalty (sglgg) or fusion penalty (fused_lasso).
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Feature l1 penalty (every method).
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Number of grid points.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// Smallest primary penalty as a fraction of lambda_max.
    #[arg(long, default_value_t = 1e-3)]
    pub grid_min: f64,
    /// Largest primary penalty as a fraction of lambda_max.
    #[arg(long, default_value_t = 1.0)]
    pub grid_max: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 100)]
    pub sims: usize,
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    /// Length of the reported ranking (capped at the number of features).
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignsArg {
    Random,
    Positive,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub n_groups: usize,
    #[arg(long, default_value_t = 25)]
    pub group_size: usize,
    /// Active groups are the first `active` groups.
    #[arg(long, default_value_t = 3)]
    pub active: usize,
    #[arg(long, default_value_t = 0.2)]
    pub active_fraction: f64,
    /// Signal-to-noise variance ratio; ignored when `--noise-sd` is given.
    #[arg(long, default_value_t = 2.0)]
    pub snr: f64,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub correlation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub effect_min: f64,
    #[arg(long, default_value_t = 1.5)]
    pub effect_max: f64,
    #[arg(long, value_enum, default_value_t = SignsArg::Random)]
    pub signs: SignsArg,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// `truth.json` written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// `coefficients.csv` written by `fit`.
    #[arg(long, conflicts_with = "stability", required_unless_present = "stability")]
    pub coefficients: Option<PathBuf>,
    /// `stability.csv` written by `stability`; the top `--top-k` features are scored.
    #[arg(long)]
    pub stability: Option<PathBuf>,
    /// Defaults to the size of the planted support.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// A usage problem: bad flags, bad config keys, missing options.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub enum Parsed {
    Run(Cli),
    /// Help or version text; print it and exit with `code`.
    Exit { text: String, code: i32 },
}

/// Parses `argv` (including the program name), merging a `--config` file.
pub fn parse_config(argv: &[String]) -> Result<Parsed, UsageError> {
    let argv = splice_config(argv)?;
    match Cli::try_parse_from(&argv) {
        Ok(cli) => Ok(Parsed::Run(cli)),
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                Ok(Parsed::Exit {
                    text: e.render().to_string(),
                    code: 0,
                })
            }
            clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => Ok(Parsed::Exit {
                text: e.render().to_string(),
                code: 2,
            }),
            _ => Err(UsageError(e.render().to_string())),
        },
    }
}

fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn splice_config(argv: &[String]) -> Result<Vec<String>, UsageError> {
    if argv.len() < 2 || argv[1].starts_with('-') {
        return Ok(argv.to_vec());
    }
    let Some(path) = config_path(&argv[2..]) else {
        return Ok(argv.to_vec());
    };
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(&argv[1]) else {
        return Ok(argv.to_vec());
    };
    let entries = read_config_file(&path)?;
    let given: Vec<&str> = argv[2..]
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();
    let mut injected = Vec::new();
    for (line, key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| {
                UsageError(format!(
                    "{}:{line}: unknown config key `{key}` for `{}`",
                    path.display(),
                    argv[1]
                ))
            })?;
        if given.contains(&key.as_str()) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => injected.push(format!("--{key}")),
                "false" => {}
                other => {
                    return Err(UsageError(format!(
                        "{}:{line}: `{key}` takes true or false, got `{other}`",
                        path.display()
                    )))
                }
            }
        } else {
            injected.push(format!("--{key}"));
            injected.push(value);
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend(argv[2..].iter().cloned());
    Ok(out)
}

/// Reads `key = value` lines; `#` starts a comment, underscores in keys become dashes.
pub fn read_config_file(path: &Path) -> Result<Vec<(usize, String, String)>, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            UsageError(format!(
                "{}:{}: expected `key = value`, got `{line}`",
                path.display(),
                i + 1
            ))
        })?;
        out.push((i + 1, key.trim().replace('_', "-"), value.trim().to_string()));
    }
    Ok(out)
}
