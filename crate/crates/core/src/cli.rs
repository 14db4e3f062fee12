//! Command-line front end. Matrices and curves are CSV; weights and
//! diagnostics are JSON.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::allocator::{allocate, AllocationConfig, Mode, SplitDiagnostic, TerminalMethod};
use crate::covmat::{self, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::portfolio::FitnessKind;
use crate::schur::GammaPair;
use crate::seriation::{self, SeriationMethod};
use crate::shrinkage::{self, ShrinkageConfig};
use crate::sim::{self, ExperimentConfig, Profile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable holding the log filter (error, info, debug, ...).
pub const LOG_ENV: &str = "SCHUR_ALLOC_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "schur-alloc",
    version,
    about = "Hierarchical portfolio allocation with Schur-complement augmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute portfolio weights for a covariance matrix or returns panel.
    Allocate(AllocateArgs),
    /// Weak shrinkage: pick xi and report the shrunk minimum-variance weights.
    Shrink(ShrinkArgs),
    /// Print the seriation order of the assets.
    Seriate(SeriateArgs),
    /// Run the out-of-sample gamma sweep.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Input {
    /// Covariance matrix CSV (optional header row of labels).
    #[arg(long)]
    pub cov: Option<PathBuf>,
    /// Returns CSV (header row, one row per period); covariance is estimated.
    #[arg(long)]
    pub returns: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[command(flatten)]
    pub input: Input,
    /// Augmentation strength for both the complement and the b-vector.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Separate strength for the b-vector (defaults to --gamma).
    #[arg(long)]
    pub gamma_b: Option<f64>,
    #[arg(long, default_value = "schur_debiased", value_parser = parse_from_str::<Mode>)]
    pub mode: Mode,
    #[arg(long, default_value = "minvar_variance", value_parser = parse_from_str::<FitnessKind>)]
    pub fitness: FitnessKind,
    #[arg(long, default_value = "minvar", value_parser = parse_from_str::<TerminalMethod>)]
    pub terminal: TerminalMethod,
    /// Terminal block size.
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    #[arg(long, default_value = "single_linkage", value_parser = parse_from_str::<SeriationMethod>)]
    pub seriation: SeriationMethod,
    /// Use the user gamma as given instead of scaling it by the feasible cap.
    #[arg(long)]
    pub no_adaptive_cap: bool,
    /// Accepted for uniformity; allocation is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShrinkArgs {
    #[arg(long)]
    pub cov: PathBuf,
    #[arg(long, default_value_t = shrinkage::DEFAULT_GRID_STEP)]
    pub grid_step: f64,
    /// Report the best grid point without local refinement.
    #[arg(long)]
    pub no_refine: bool,
    /// Accepted for uniformity; shrinkage is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Result JSON: xi, clipped variance and weights (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the shrunk covariance matrix as CSV.
    #[arg(long)]
    pub shrunk: Option<PathBuf>,
    /// Write the clipped-variance curve as CSV (xi, clipped_variance).
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeriateArgs {
    #[arg(long)]
    pub cov: PathBuf,
    #[arg(long, default_value = "single_linkage", value_parser = parse_from_str::<SeriationMethod>)]
    pub seriation: SeriationMethod,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment configuration JSON; overrides --profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "desk", value_parser = parse_from_str::<Profile>)]
    pub profile: Profile,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated gamma values, e.g. 0,0.5,1.
    #[arg(long, value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_from_str::<Mode>)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Per-trial results CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-gamma summary CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// SVG chart of the mean normalized variance against gamma.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct AllocationDiagnostics {
    pub portfolio_variance: f64,
    pub permutation: Vec<usize>,
    pub splits: Vec<SplitDiagnostic>,
}

#[derive(Debug, Serialize)]
pub struct WeightsOutput {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
    pub gamma: GammaPair,
    pub mode: Mode,
    pub diagnostics: AllocationDiagnostics,
}

#[derive(Debug, Serialize)]
struct ShrinkOutput {
    xi: f64,
    clipped_variance: f64,
    labels: Vec<String>,
    weights: Vec<f64>,
    skipped: Vec<f64>,
}

fn labels_or_default(labels: Option<&[String]>, n: usize) -> Vec<String> {
    labels
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| (0..n).map(|i| format!("a{i}")).collect())
}

fn load_input(input: &Input) -> Result<CovarianceMatrix> {
    match (&input.cov, &input.returns) {
        (Some(p), _) => covmat::read_matrix_file(p),
        (None, Some(p)) => covmat::empirical_covariance(&covmat::read_panel_file(p)?),
        (None, None) => Err(Error::InvalidConfig("one of --cov or --returns is required".into())),
    }
}

/// Write to `path`, or stdout when `None`.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn weights_csv(labels: &[String], weights: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "weight"])?;
    for (l, v) in labels.iter().zip(weights) {
        w.write_record([l.clone(), v.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

pub fn cmd_allocate(args: &AllocateArgs) -> Result<()> {
    let cov = load_input(&args.input)?;
    let gammas = GammaPair::new(args.gamma, args.gamma_b.unwrap_or(args.gamma))?;
    let config = AllocationConfig {
        gammas,
        mode: args.mode,
        fitness: args.fitness,
        terminal: args.terminal,
        terminal_size: args.m,
        seriation: args.seriation,
        adaptive_cap: !args.no_adaptive_cap,
        ..AllocationConfig::default()
    };
    let report = allocate(&cov, &config)?;
    let labels = labels_or_default(cov.labels(), cov.dim());
    let weights = report.weights.as_slice().to_vec();
    let bytes = match args.format {
        Format::Csv => weights_csv(&labels, &weights)?,
        Format::Json => to_json(&WeightsOutput {
            labels,
            weights,
            gamma: config.effective_gammas(),
            mode: args.mode,
            diagnostics: AllocationDiagnostics {
                portfolio_variance: report.portfolio_variance,
                permutation: report.permutation.order().to_vec(),
                splits: report.splits,
            },
        })?,
    };
    emit(args.out.as_deref(), &bytes)
}

pub fn cmd_shrink(args: &ShrinkArgs) -> Result<()> {
    let cov = covmat::read_matrix_file(&args.cov)?;
    let cfg = ShrinkageConfig {
        grid_step: args.grid_step,
        refine: !args.no_refine,
    };
    let res = shrinkage::weak_shrink_with(&cov, &cfg)?;

    let json = to_json(&ShrinkOutput {
        xi: res.xi,
        clipped_variance: res.clipped_variance,
        labels: labels_or_default(cov.labels(), cov.dim()),
        weights: res.weights.as_slice().to_vec(),
        skipped: res.skipped.iter().map(|(xi, _)| *xi).collect(),
    })?;
    let shrunk = match &args.shrunk {
        Some(_) => {
            let mut buf = Vec::new();
            covmat::write_matrix_csv(&res.shrunk, &mut buf)?;
            Some(buf)
        }
        None => None,
    };
    let curve = match &args.curve {
        Some(_) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["xi", "clipped_variance"])?;
            for p in &res.curve {
                let v = p.clipped_variance.map_or_else(|| "NaN".to_string(), |v| v.to_string());
                w.write_record([p.xi.to_string(), v])?;
            }
            Some(w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
        }
        None => None,
    };
    if let (Some(p), Some(b)) = (&args.shrunk, &shrunk) {
        emit(Some(p), b)?;
    }
    if let (Some(p), Some(b)) = (&args.curve, &curve) {
        emit(Some(p), b)?;
    }
    emit(args.out.as_deref(), &json)
}

pub fn cmd_seriate(args: &SeriateArgs) -> Result<()> {
    let cov = covmat::read_matrix_file(&args.cov)?;
    let perm = seriation::seriate(&cov, args.seriation)?;
    let labels = labels_or_default(cov.labels(), cov.dim());
    let ordered: Vec<String> = perm.order().iter().map(|&i| labels[i].clone()).collect();
    let bytes = match args.format {
        Format::Json => to_json(&serde_json::json!({ "order": perm.order(), "labels": ordered }))?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["position", "index", "label"])?;
            for (pos, (&i, l)) in perm.order().iter().zip(&ordered).enumerate() {
                w.write_record([pos.to_string(), i.to_string(), l.clone()])?;
            }
            w.into_inner().map_err(|e| Error::Io(e.to_string()))?
        }
    };
    emit(args.out.as_deref(), &bytes)
}

pub fn experiment_config(args: &SimulateArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::profile(args.profile),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(g) = &args.gamma_grid {
        cfg.gamma_grid = g.clone();
    }
    if let Some(mode) = args.mode {
        cfg.allocation.mode = mode;
    }
    if let Some(m) = args.m {
        cfg.allocation.terminal_size = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = experiment_config(args)?;
    let result = sim::run_experiment(&cfg)?;
    let summary = sim::summarize(&result)?;
    let mut rows = Vec::new();
    sim::write_results_csv(&result, &mut rows)?;
    let mut table = Vec::new();
    sim::write_summary_csv(&summary, &mut table)?;
    if let Some(p) = &args.summary {
        emit(Some(p), &table)?;
    }
    if let Some(p) = &args.svg {
        emit(Some(p), sim::summary_svg(&summary).as_bytes())?;
    }
    emit(args.out.as_deref(), &rows)
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Allocate(a) => cmd_allocate(a),
        Command::Shrink(a) => cmd_shrink(a),
        Command::Seriate(a) => cmd_seriate(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Parse `args`, run, and return the process exit code. Errors are reported
/// on stderr as one line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("schur-alloc: {e}");
            exit_code(&e)
        }
    }
}
