//! Command-line front end for the CATCH classifier.
//!
//! Every command is deterministic given its inputs, configuration and seed.
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
//! 4 shape or consistency error, 5 numerical error.

mod commands;
mod config;
mod design;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catch_core::simulation::ExperimentConfig;

use commands::{FitCmd, GridOptions, PredictCmd, SimulateCmd};
use config::{parse_list, require, ConfigFile};
use errors::CliError;

/// Covariate-adjusted tensor classification.
///
/// Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
/// 4 shape or consistency error, 5 numerical error.
#[derive(Parser)]
#[command(name = "catch", version, arg_required_else_help = true)]
struct Cli {
    /// Cap the worker-thread pool; 1 disables parallelism entirely.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate parameters, tune the penalty and persist the chosen model.
    Fit(FitArgs),
    /// Classify an observation stack with a persisted model.
    Predict(PredictArgs),
    /// Report the cross-validation error curve over the penalty grid.
    Cv(CvArgs),
    /// Run a replicated simulation experiment from the catalog or a design file.
    Simulate(SimulateArgs),
    /// Tabulate the closed-form error rates of the bivariate illustration.
    Example1(Example1Args),
}

/// Flags shared by every command that reads a training dataset.
#[derive(Args)]
struct DataArgs {
    /// Observation stack: CTB tensor, observations in the last mode.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Covariates: headerless CSV, one row per observation.
    #[arg(long)]
    u: Option<PathBuf>,
    /// Labels: one-column CSV of integers 1..=K.
    #[arg(long)]
    y: Option<PathBuf>,
}

/// Flags shared by every command that fits penalized coefficients.
#[derive(Args)]
struct GridArgs {
    /// Comma-separated penalty values replacing the automatic grid
    /// (descending order keeps warm starts effective).
    #[arg(long)]
    lambdas: Option<String>,
    /// Number of automatic grid points (default 50).
    #[arg(long)]
    lambda_count: Option<usize>,
    /// Smallest automatic grid value as a fraction of the largest
    /// (default 0.05, or 0.01 when observations outnumber tensor entries).
    #[arg(long)]
    lambda_min_ratio: Option<f64>,
    /// Convergence tolerance on the stationarity residual.
    #[arg(long)]
    tol: Option<f64>,
    /// Sweep budget per penalty value.
    #[arg(long)]
    max_sweeps: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Optional key=value configuration file; flags win over file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Directory to write the model into.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit exactly this penalty instead of tuning by cross-validation.
    #[arg(long)]
    lambda: Option<f64>,
    /// Cross-validation folds (default 5).
    #[arg(long)]
    folds: Option<usize>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Optional key=value configuration file; flags win over file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model directory written by `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Observation stack: CTB tensor, observations in the last mode.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Covariates: headerless CSV, one row per observation.
    #[arg(long)]
    u: Option<PathBuf>,
    /// Optional true labels; adds an error_rate report line.
    #[arg(long)]
    y: Option<PathBuf>,
    /// CSV file to write the predictions into.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    /// Optional key=value configuration file; flags win over file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// CSV file for the error curve; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cross-validation folds (default 5).
    #[arg(long)]
    folds: Option<usize>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Optional key=value configuration file; flags win over file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog design name (see the error listing for the catalog).
    #[arg(long)]
    model: Option<String>,
    /// Custom design file; exactly one of --model and --spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Comma-separated methods: bayes, catch, catch_x, tensor_oracle,
    /// vector_oracle (default catch).
    #[arg(long)]
    methods: Option<String>,
    /// Monte-Carlo replicates (default 10).
    #[arg(long)]
    replicates: Option<usize>,
    /// Root seed; replicate r draws its own streams from it (required).
    #[arg(long)]
    seed: Option<u64>,
    /// Test observations scored per batch (default 256).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Check every fit's stationarity residual and objective trace.
    #[arg(long)]
    diagnostics: bool,
    /// CSV file for the result table; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct Example1Args {
    /// Optional key=value configuration file; flags win over file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated covariate-effect sizes (default 0,1,2,4,8).
    #[arg(long)]
    alphas: Option<String>,
    /// CSV file for the table; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    match cli.command {
        Command::Fit(args) => {
            let mut file = ConfigFile::load(args.config.as_deref())?;
            apply_threads(threads, &mut file)?;
            let x = require(file.merge(args.data.x, "x")?, "x")?;
            let u = file.merge(args.data.u, "u")?;
            let y = require(file.merge(args.data.y, "y")?, "y")?;
            let out = require(file.merge(args.out, "out")?, "out")?;
            let lambda = file.merge(args.lambda, "lambda")?;
            let folds = file.merge(args.folds, "folds")?.unwrap_or(5);
            let config = grid_config(args.grid, &mut file)?.into_fit_config()?;
            file.finish()?;
            commands::cmd_fit(FitCmd {
                x,
                u,
                y,
                out,
                lambda,
                folds,
                config,
            })
        }
        Command::Predict(args) => {
            let mut file = ConfigFile::load(args.config.as_deref())?;
            apply_threads(threads, &mut file)?;
            let model = require(file.merge(args.model, "model")?, "model")?;
            let x = require(file.merge(args.x, "x")?, "x")?;
            let u = file.merge(args.u, "u")?;
            let y = file.merge(args.y, "y")?;
            let out = require(file.merge(args.out, "out")?, "out")?;
            file.finish()?;
            commands::cmd_predict(PredictCmd { model, x, u, y, out })
        }
        Command::Cv(args) => {
            let mut file = ConfigFile::load(args.config.as_deref())?;
            apply_threads(threads, &mut file)?;
            let x = require(file.merge(args.data.x, "x")?, "x")?;
            let u = file.merge(args.data.u, "u")?;
            let y = require(file.merge(args.data.y, "y")?, "y")?;
            let out = file.merge(args.out, "out")?;
            let folds = file.merge(args.folds, "folds")?.unwrap_or(5);
            let config = grid_config(args.grid, &mut file)?.into_fit_config()?;
            file.finish()?;
            commands::cmd_cv(commands::CvCmd {
                x,
                u,
                y,
                out,
                folds,
                config,
            })
        }
        Command::Simulate(args) => {
            let mut file = ConfigFile::load(args.config.as_deref())?;
            apply_threads(threads, &mut file)?;
            let model = file.merge(args.model, "model")?;
            let spec_path = file.merge(args.spec, "spec")?;
            let spec = match (model, spec_path) {
                (Some(name), None) => design::catalog_design(&name)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
                    design::parse_design(&text, &path.display().to_string())?
                }
                (Some(_), Some(_)) => {
                    return Err(CliError::usage(
                        "--model and --spec are mutually exclusive",
                    ))
                }
                (None, None) => {
                    return Err(CliError::usage(
                        "one of --model or --spec is required",
                    ))
                }
            };
            let methods_raw = file
                .merge(args.methods, "methods")?
                .unwrap_or_else(|| "catch".to_string());
            let methods = commands::parse_methods(&methods_raw)?;
            let replicates = file.merge(args.replicates, "replicates")?.unwrap_or(10);
            let seed = require(file.merge(args.seed, "seed")?, "seed")?;
            let batch_size = file.merge(args.batch_size, "batch_size")?;
            let diagnostics = file
                .merge(
                    if args.diagnostics { Some(true) } else { None },
                    "diagnostics",
                )?
                .unwrap_or_default();
            let out = file.merge(args.out, "out")?;
            let fit = grid_config(args.grid, &mut file)?.into_fit_config()?;
            file.finish()?;
            let mut config = ExperimentConfig::new(replicates, seed);
            config.fit = fit;
            if let Some(batch) = batch_size {
                config.batch_size = batch;
            }
            config.collect_diagnostics = diagnostics;
            commands::cmd_simulate(SimulateCmd {
                spec,
                methods,
                config,
                out,
            })
        }
        Command::Example1(args) => {
            let mut file = ConfigFile::load(args.config.as_deref())?;
            apply_threads(threads, &mut file)?;
            let alphas_raw = file
                .merge(args.alphas, "alphas")?
                .unwrap_or_else(|| "0,1,2,4,8".to_string());
            let alphas: Vec<f64> = parse_list(&alphas_raw, "alphas")?;
            let out = file.merge(args.out, "out")?;
            file.finish()?;
            commands::cmd_example1(&alphas, out.as_deref())
        }
    }
}

/// Resolves the worker-thread cap (global flag wins over a config-file
/// `threads` key) and installs it process-wide.
fn apply_threads(flag: Option<usize>, file: &mut ConfigFile) -> Result<(), CliError> {
    let threads = file.merge(flag, "threads")?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Merges the grid flags with their config-file keys.
fn grid_config(args: GridArgs, file: &mut ConfigFile) -> Result<GridOptions, CliError> {
    let lambdas = match file.merge(args.lambdas, "lambdas")? {
        Some(raw) => Some(parse_list(&raw, "lambdas")?),
        None => None,
    };
    Ok(GridOptions {
        lambdas,
        lambda_count: file.merge(args.lambda_count, "lambda_count")?,
        lambda_min_ratio: file.merge(args.lambda_min_ratio, "lambda_min_ratio")?,
        tol: file.merge(args.tol, "tol")?,
        max_sweeps: file.merge(args.max_sweeps, "max_sweeps")?,
    })
}
