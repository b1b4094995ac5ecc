//! The five commands: fit, predict, cv, simulate, example1.
//!
//! Stdout carries the primary table when no output path is given, and
//! `key=value` report lines otherwise; report lines move to stderr whenever
//! the table itself is on stdout. All tables are plain CSV with a fixed
//! header, and every floating-point cell uses the shortest decimal form
//! that parses back to the same value, so identical inputs produce
//! byte-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use catch_core::classifier;
use catch_core::estimation::Dataset;
use catch_core::io;
use catch_core::model::{self, FitConfig};
use catch_core::simulation::{self, example1_rates, ExperimentConfig, Method, SimulationSpec};
use catch_core::solver::LambdaGrid;
use ndarray::Array2;

use crate::errors::CliError;

/// Grid and solver flags shared by fit, cv and simulate.
#[derive(Default)]
pub struct GridOptions {
    /// Explicit penalty values, fitted in the given order (descending keeps
    /// the warm starts effective). Replaces the automatic grid.
    pub lambdas: Option<Vec<f64>>,
    pub lambda_count: Option<usize>,
    pub lambda_min_ratio: Option<f64>,
    pub tol: Option<f64>,
    pub max_sweeps: Option<usize>,
}

impl GridOptions {
    pub fn into_fit_config(self) -> Result<FitConfig, CliError> {
        let mut config = FitConfig::default();
        if let Some(list) = self.lambdas {
            if self.lambda_count.is_some() || self.lambda_min_ratio.is_some() {
                return Err(CliError::usage(
                    "--lambdas replaces the automatic grid; it cannot be combined \
                     with --lambda-count or --lambda-min-ratio",
                ));
            }
            if list.is_empty() {
                return Err(CliError::usage("--lambdas needs at least one value"));
            }
            config.lambdas = Some(LambdaGrid::Explicit(list));
        } else if self.lambda_count.is_some() || self.lambda_min_ratio.is_some() {
            config.lambdas = Some(LambdaGrid::Auto {
                count: self.lambda_count.unwrap_or(50),
                min_ratio: self.lambda_min_ratio.unwrap_or(0.05),
            });
        }
        if let Some(tol) = self.tol {
            config.tol = tol;
        }
        if let Some(max_sweeps) = self.max_sweeps {
            config.max_sweeps = max_sweeps;
        }
        Ok(config)
    }
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(format!("{}: {e}", path.display()))
}

/// Reads the on-disk dataset triple: X as CTB with observations in the last
/// mode, optional U as headerless CSV (one row per observation), Y as a
/// one-column CSV of labels 1..=K.
pub fn read_dataset(x: &Path, u: Option<&Path>, y: &Path) -> Result<Dataset, CliError> {
    let stack = io::read_ctb(x)?;
    let covariates: Option<Array2<f64>> = match u {
        Some(path) => Some(io::read_csv_matrix(path)?),
        None => None,
    };
    let labels = io::read_labels(y)?;
    Ok(Dataset::new(stack, covariates, labels)?)
}

/// Writes `table` to `out` when given, to stdout otherwise. Returns true
/// when stdout carried the table, so report lines can divert to stderr.
fn emit_table(out: Option<&Path>, table: &str) -> Result<bool, CliError> {
    match out {
        Some(path) => {
            fs::write(path, table).map_err(file_error(path))?;
            Ok(false)
        }
        None => {
            print!("{table}");
            Ok(true)
        }
    }
}

macro_rules! report {
    ($to_stderr:expr, $($arg:tt)*) => {
        if $to_stderr {
            eprintln!($($arg)*);
        } else {
            println!($($arg)*);
        }
    };
}

pub struct FitCmd {
    pub x: PathBuf,
    pub u: Option<PathBuf>,
    pub y: PathBuf,
    pub out: PathBuf,
    /// Fit exactly this penalty instead of tuning by cross-validation.
    pub lambda: Option<f64>,
    pub folds: usize,
    pub config: FitConfig,
}

/// Fits the full pipeline and persists the chosen model plus a path summary.
/// Without `--lambda` the penalty is chosen by stratified cross-validation
/// on the training data and the summary covers the whole grid refit on all
/// observations; with it the path is that single value.
pub fn cmd_fit(cmd: FitCmd) -> Result<(), CliError> {
    let data = read_dataset(&cmd.x, cmd.u.as_deref(), &cmd.y)?;
    let (fitted, chosen, cv_errors) = if let Some(lambda) = cmd.lambda {
        let config = FitConfig {
            lambdas: Some(LambdaGrid::Explicit(vec![lambda])),
            ..cmd.config.clone()
        };
        (model::fit(&data, &config)?, 0, None)
    } else {
        let cv = classifier::cross_validate(&data, &cmd.config, cmd.folds)?;
        let config = FitConfig {
            lambdas: Some(LambdaGrid::Explicit(cv.lambdas.clone())),
            ..cmd.config.clone()
        };
        (model::fit(&data, &config)?, cv.chosen_index, Some(cv.mean_errors))
    };
    let chosen_model = fitted.model_at(chosen)?;
    model::save_model(&chosen_model, &cmd.out)?;

    let mut table = String::from("lambda,selected,objective,sweeps,cv_error\n");
    for (i, single) in fitted.path.fits.iter().enumerate() {
        let cv_cell = match &cv_errors {
            Some(errors) => format!("{}", errors[i]),
            None => String::new(),
        };
        let _ = writeln!(
            table,
            "{},{},{},{},{cv_cell}",
            single.lambda,
            single.selected.len(),
            single.objective,
            single.sweeps
        );
    }
    let summary = cmd.out.join("path_summary.csv");
    fs::write(&summary, table).map_err(file_error(&summary))?;

    println!("lambda_max={}", fitted.path.lambda_max);
    println!("chosen_lambda={}", fitted.path.fits[chosen].lambda);
    println!("selected={}", fitted.path.fits[chosen].selected.len());
    if let Some(errors) = &cv_errors {
        println!("cv_error={}", errors[chosen]);
    }
    println!("model_dir={}", cmd.out.display());
    Ok(())
}

pub struct PredictCmd {
    pub model: PathBuf,
    pub x: PathBuf,
    pub u: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub out: PathBuf,
}

/// Classifies an observation stack with a persisted model, writing one CSV
/// row per observation with the label and all class scores. Supplying true
/// labels additionally prints the error rate.
pub fn cmd_predict(cmd: PredictCmd) -> Result<(), CliError> {
    let model = model::load_model(&cmd.model)?;
    let classes = model.num_classes();
    let mut header = String::from("index,label");
    for class in 1..=classes {
        let _ = write!(header, ",score_{class}");
    }
    header.push('\n');

    let dims = io::read_ctb_header(&cmd.x)?;
    let expected = model.obs_shape();
    if dims.len() != expected.len() + 1 || dims[..expected.len()] != *expected {
        return Err(CliError::shape(format!(
            "observation stack {}: shape {:?} does not match model shape {:?} \
             plus one trailing observation mode",
            cmd.x.display(),
            dims,
            expected
        )));
    }
    let n = *dims.last().unwrap();
    if n == 0 {
        fs::write(&cmd.out, &header).map_err(file_error(&cmd.out))?;
        println!("n=0");
        println!("predictions={}", cmd.out.display());
        return Ok(());
    }

    let covariates: Option<Array2<f64>> = match (&cmd.u, model.has_covariates()) {
        (Some(path), true) => Some(io::read_csv_matrix(path)?),
        (None, false) => None,
        (None, true) => {
            return Err(CliError::shape(
                "model adjusts for covariates but no --u was supplied",
            ))
        }
        (Some(_), false) => {
            return Err(CliError::shape(
                "model was fit without covariates but --u was supplied",
            ))
        }
    };
    let stack = io::read_ctb(&cmd.x)?;
    let predictions = classifier::predict_stack(&model, &stack, covariates.as_ref())?;

    let mut table = header;
    for (i, prediction) in predictions.iter().enumerate() {
        let _ = write!(table, "{},{}", i + 1, prediction.label);
        for score in &prediction.scores {
            let _ = write!(table, ",{score}");
        }
        table.push('\n');
    }
    fs::write(&cmd.out, table).map_err(file_error(&cmd.out))?;

    println!("n={n}");
    println!("predictions={}", cmd.out.display());
    if let Some(y_path) = &cmd.y {
        let labels = io::read_labels(y_path)?;
        if labels.len() != n {
            return Err(CliError::shape(format!(
                "label file has {} entries but the stack has {n} observations",
                labels.len()
            )));
        }
        let wrong = predictions
            .iter()
            .zip(&labels)
            .filter(|(p, &y)| p.label != y)
            .count();
        println!("error_rate={}", wrong as f64 / n as f64);
    }
    Ok(())
}

pub struct CvCmd {
    pub x: PathBuf,
    pub u: Option<PathBuf>,
    pub y: PathBuf,
    pub out: Option<PathBuf>,
    pub folds: usize,
    pub config: FitConfig,
}

/// Cross-validates the penalty grid and reports the error curve plus the
/// chosen penalty (ties go to the larger penalty).
pub fn cmd_cv(cmd: CvCmd) -> Result<(), CliError> {
    let data = read_dataset(&cmd.x, cmd.u.as_deref(), &cmd.y)?;
    let cv = classifier::cross_validate(&data, &cmd.config, cmd.folds)?;
    let mut table = String::from("lambda,cv_error\n");
    for (lambda, error) in cv.lambdas.iter().zip(&cv.mean_errors) {
        let _ = writeln!(table, "{lambda},{error}");
    }
    let on_stdout = emit_table(cmd.out.as_deref(), &table)?;
    report!(on_stdout, "chosen_lambda={}", cv.chosen_lambda);
    report!(on_stdout, "chosen_index={}", cv.chosen_index);
    report!(on_stdout, "cv_error={}", cv.mean_errors[cv.chosen_index]);
    Ok(())
}

/// Maps the documented method names onto the experiment methods.
pub fn parse_methods(raw: &str) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for name in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        methods.push(match name {
            "bayes" => Method::Bayes,
            "catch" => Method::Catch {
                use_covariates: true,
            },
            "catch_x" => Method::Catch {
                use_covariates: false,
            },
            "tensor_oracle" => Method::TensorOracle,
            "vector_oracle" => Method::VectorOracle,
            other => {
                return Err(CliError::usage(format!(
                    "unknown method {other:?}; methods are bayes, catch, catch_x, \
                     tensor_oracle, vector_oracle"
                )))
            }
        });
    }
    if methods.is_empty() {
        return Err(CliError::usage("--methods needs at least one name"));
    }
    Ok(methods)
}

pub struct SimulateCmd {
    pub spec: SimulationSpec,
    pub methods: Vec<Method>,
    pub config: ExperimentConfig,
    pub out: Option<PathBuf>,
}

/// Runs the replicated generate/fit/evaluate protocol and writes one result
/// row per method: mean test error with its standard error, plus selection
/// rates for penalized methods on designs with a known support.
pub fn cmd_simulate(cmd: SimulateCmd) -> Result<(), CliError> {
    let report = simulation::run_experiment(&cmd.spec, &cmd.methods, &cmd.config)?;
    let mut table = String::from("method,model,mean_error,se_error,mean_tpr,mean_fpr\n");
    for method in &report.methods {
        let (tpr, fpr) = match &method.selection {
            Some(selection) => (
                format!("{}", selection.mean_tpr),
                format!("{}", selection.mean_fpr),
            ),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            table,
            "{},{},{},{},{tpr},{fpr}",
            method.label, report.name, method.mean_error, method.se_error
        );
    }
    let on_stdout = emit_table(cmd.out.as_deref(), &table)?;
    if let Some(diagnostics) = &report.diagnostics {
        report!(on_stdout, "fits_checked={}", diagnostics.fits_checked);
        report!(on_stdout, "max_kkt_violation={}", diagnostics.max_kkt_violation);
        report!(on_stdout, "traces_monotone={}", diagnostics.traces_monotone);
    }
    Ok(())
}

/// Writes the closed-form error-rate table of the bivariate illustration:
/// one row per requested covariate-effect size.
pub fn cmd_example1(alphas: &[f64], out: Option<&Path>) -> Result<(), CliError> {
    let mut table = String::from("alpha,r_u,r_x11_u,r_x11,r_x\n");
    for &alpha in alphas {
        let rates = example1_rates(alpha);
        let _ = writeln!(
            table,
            "{alpha},{},{},{},{}",
            rates.r_u, rates.r_x11_u, rates.r_x11, rates.r_x
        );
    }
    emit_table(out, &table)?;
    Ok(())
}
