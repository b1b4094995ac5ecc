//! End-to-end tests of the `catch` binary: every command is exercised
//! through a real process, and the documented exit codes and CSV shapes
//! are checked against hand-built fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use catch_core::io;
use catch_core::simulation::{
    box_indices, training_data, CovKind, CovariateEffects, Placement, SimulationSpec,
};
use ndarray::arr2;
use tempfile::TempDir;

fn catch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// The value of a `key=value` report line.
fn report_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .map(str::to_string)
}

/// A small two-class matrix design with a strong mean difference, so
/// tuned fits keep a nonempty coefficient block.
fn fixture_spec(with_covariates: bool) -> SimulationSpec {
    let mut spec = SimulationSpec::new(
        "fixture",
        vec![4, 3],
        vec![20, 20],
        vec![CovKind::Ar(0.3), CovKind::Identity],
    );
    spec.b = vec![vec![Placement::new(
        1.5,
        box_indices(&[&[0, 1], &[0, 1]]),
    )]];
    if with_covariates {
        spec.covariates = Some(CovariateEffects {
            phi: arr2(&[[0.0], [1.2]]),
            alpha_star: Vec::new(),
        });
    }
    spec
}

/// Writes one training replicate to disk in the documented layout and
/// returns the file paths.
fn write_dataset(dir: &Path, spec: &SimulationSpec, seed: u64) -> (PathBuf, Option<PathBuf>, PathBuf) {
    let data = training_data(spec, seed, 0).expect("generate");
    let x_path = dir.join("x.ctb");
    io::write_ctb(&x_path, data.stack()).expect("write x");
    let u_path = data.covariates().map(|u| {
        let path = dir.join("u.csv");
        io::write_csv_matrix(&path, u).expect("write u");
        path
    });
    let y_path = dir.join("y.csv");
    let lines: String = data.labels().iter().map(|l| format!("{l}\n")).collect();
    fs::write(&y_path, lines).expect("write y");
    (x_path, u_path, y_path)
}

/// Raw CTB bytes for an all-zero stack of the given extents.
fn raw_ctb(dims: &[u64]) -> Vec<u8> {
    let mut bytes = b"CTB1".to_vec();
    bytes.push(dims.len() as u8);
    for &d in dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    let elements: u64 = dims.iter().product();
    bytes.extend(std::iter::repeat_n(0u8, 8 * elements as usize));
    bytes
}

#[test]
fn fit_then_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let (x, _, y) = write_dataset(dir.path(), &fixture_spec(false), 11);
    let model_dir = dir.path().join("model");

    let fit = catch(&[
        "fit",
        "--x", x.to_str().unwrap(),
        "--y", y.to_str().unwrap(),
        "--out", model_dir.to_str().unwrap(),
        "--lambda-count", "12",
        "--folds", "4",
    ]);
    assert_eq!(code(&fit), 0, "fit failed: {}", stderr(&fit));
    let fit_out = stdout(&fit);
    for key in ["lambda_max", "chosen_lambda", "selected", "cv_error", "model_dir"] {
        assert!(report_value(&fit_out, key).is_some(), "missing {key} in: {fit_out}");
    }
    for file in [
        "priors.csv", "intercepts.csv", "mu_1.ctb", "mu_2.ctb",
        "sigma_1.csv", "sigma_2.csv", "B_2.ctb", "path_summary.csv",
    ] {
        assert!(model_dir.join(file).is_file(), "missing {file}");
    }
    let summary = fs::read_to_string(model_dir.join("path_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows[0], "lambda,selected,objective,sweeps,cv_error");
    assert_eq!(rows.len(), 13, "12 grid rows plus the header");
    assert!(rows[1..].iter().all(|r| !r.ends_with(',')), "cv cells filled");

    let predictions = dir.path().join("pred.csv");
    let predict = catch(&[
        "predict",
        "--model", model_dir.to_str().unwrap(),
        "--x", x.to_str().unwrap(),
        "--y", y.to_str().unwrap(),
        "--out", predictions.to_str().unwrap(),
    ]);
    assert_eq!(code(&predict), 0, "predict failed: {}", stderr(&predict));
    let predict_out = stdout(&predict);
    assert_eq!(report_value(&predict_out, "n").as_deref(), Some("40"));
    let error: f64 = report_value(&predict_out, "error_rate").unwrap().parse().unwrap();
    assert!(error < 0.45, "in-sample error {error} should beat chance");
    // Training error of the persisted model never exceeds its own
    // cross-validation estimate (a fit sees its training fold in full).
    let cv_error: f64 = report_value(&fit_out, "cv_error").unwrap().parse().unwrap();
    assert!(error <= cv_error, "in-sample {error} vs cross-validated {cv_error}");
    let table = fs::read_to_string(&predictions).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "index,label,score_1,score_2");
    assert_eq!(lines.len(), 41);
    assert!(lines[1].starts_with("1,"));

    // A stack whose observation shape disagrees with the model.
    let bad_x = dir.path().join("bad.ctb");
    fs::write(&bad_x, raw_ctb(&[5, 3, 4])).unwrap();
    let bad = catch(&[
        "predict",
        "--model", model_dir.to_str().unwrap(),
        "--x", bad_x.to_str().unwrap(),
        "--out", dir.path().join("bad.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&bad), 4, "wrong shape: {}", stderr(&bad));

    // An observation stack with no observations: header-only CSV, success.
    let empty_x = dir.path().join("empty.ctb");
    fs::write(&empty_x, raw_ctb(&[4, 3, 0])).unwrap();
    let empty_csv = dir.path().join("empty.csv");
    let empty = catch(&[
        "predict",
        "--model", model_dir.to_str().unwrap(),
        "--x", empty_x.to_str().unwrap(),
        "--out", empty_csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&empty), 0, "empty stack: {}", stderr(&empty));
    assert_eq!(report_value(&stdout(&empty), "n").as_deref(), Some("0"));
    assert_eq!(fs::read_to_string(&empty_csv).unwrap(), "index,label,score_1,score_2\n");

    // Covariates offered to a covariate-free model.
    let u_path = dir.path().join("u.csv");
    fs::write(&u_path, "0\n".repeat(40)).unwrap();
    let mismatched = catch(&[
        "predict",
        "--model", model_dir.to_str().unwrap(),
        "--x", x.to_str().unwrap(),
        "--u", u_path.to_str().unwrap(),
        "--out", dir.path().join("m.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&mismatched), 4);
    assert!(stderr(&mismatched).contains("without covariates"), "{}", stderr(&mismatched));

    // Fixing the penalty skips tuning: no cv_error report, single-row path.
    let pinned_dir = dir.path().join("pinned");
    let lambda = report_value(&fit_out, "chosen_lambda").unwrap();
    let pinned = catch(&[
        "fit",
        "--x", x.to_str().unwrap(),
        "--y", y.to_str().unwrap(),
        "--out", pinned_dir.to_str().unwrap(),
        "--lambda", &lambda,
    ]);
    assert_eq!(code(&pinned), 0, "pinned fit: {}", stderr(&pinned));
    let pinned_out = stdout(&pinned);
    assert_eq!(report_value(&pinned_out, "chosen_lambda").as_deref(), Some(lambda.as_str()));
    assert!(report_value(&pinned_out, "cv_error").is_none());
    let summary = fs::read_to_string(pinned_dir.join("path_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].ends_with(','), "cv cell empty without tuning");
}

#[test]
fn refit_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (x, _, y) = write_dataset(dir.path(), &fixture_spec(false), 23);
    let mut dirs = Vec::new();
    for name in ["first", "second"] {
        let model_dir = dir.path().join(name);
        let fit = catch(&[
            "--threads", "1",
            "fit",
            "--x", x.to_str().unwrap(),
            "--y", y.to_str().unwrap(),
            "--out", model_dir.to_str().unwrap(),
            "--lambda-count", "8",
            "--folds", "4",
        ]);
        assert_eq!(code(&fit), 0, "{}", stderr(&fit));
        dirs.push(model_dir);
    }
    let mut names: Vec<String> = fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"B_2.ctb".to_string()));
    for name in &names {
        let first = fs::read(dirs[0].join(name)).unwrap();
        let second = fs::read(dirs[1].join(name)).unwrap();
        assert_eq!(first, second, "{name} differs between identical runs");
    }
}

#[test]
fn covariate_model_round_trip() {
    let dir = TempDir::new().unwrap();
    let (x, u, y) = write_dataset(dir.path(), &fixture_spec(true), 31);
    let u = u.expect("fixture has covariates");
    let model_dir = dir.path().join("model");
    let fit = catch(&[
        "fit",
        "--x", x.to_str().unwrap(),
        "--u", u.to_str().unwrap(),
        "--y", y.to_str().unwrap(),
        "--out", model_dir.to_str().unwrap(),
        "--lambda-count", "8",
    ]);
    assert_eq!(code(&fit), 0, "fit failed: {}", stderr(&fit));
    for file in ["phi.csv", "psi.csv", "gamma.csv", "alpha.ctb"] {
        assert!(model_dir.join(file).is_file(), "missing {file}");
    }

    // The model adjusts for covariates, so predicting without them fails.
    let missing_u = catch(&[
        "predict",
        "--model", model_dir.to_str().unwrap(),
        "--x", x.to_str().unwrap(),
        "--out", dir.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&missing_u), 4);
    assert!(stderr(&missing_u).contains("no --u"), "{}", stderr(&missing_u));

    let predict = catch(&[
        "predict",
        "--model", model_dir.to_str().unwrap(),
        "--x", x.to_str().unwrap(),
        "--u", u.to_str().unwrap(),
        "--y", y.to_str().unwrap(),
        "--out", dir.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&predict), 0, "predict failed: {}", stderr(&predict));
    assert!(report_value(&stdout(&predict), "error_rate").is_some());
}

#[test]
fn missing_class_and_missing_file_errors() {
    let dir = TempDir::new().unwrap();
    let (x, _, _) = write_dataset(dir.path(), &fixture_spec(false), 41);

    // Labels spanning 1..=3 with class 2 absent.
    let y_path = dir.path().join("gap.csv");
    let labels: String = (0..40).map(|i| if i < 20 { "1\n" } else { "3\n" }).collect();
    fs::write(&y_path, labels).unwrap();
    let out_dir = dir.path().join("model");
    let gap = catch(&[
        "fit",
        "--x", x.to_str().unwrap(),
        "--y", y_path.to_str().unwrap(),
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&gap), 4, "{}", stderr(&gap));
    assert!(stderr(&gap).contains('2'), "names the absent class: {}", stderr(&gap));

    let absent = catch(&[
        "fit",
        "--x", dir.path().join("nope.ctb").to_str().unwrap(),
        "--y", y_path.to_str().unwrap(),
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&absent), 3, "{}", stderr(&absent));

    // Fewer labels than observations.
    let short_y = dir.path().join("short.csv");
    fs::write(&short_y, "1\n2\n".repeat(15)).unwrap();
    let inconsistent = catch(&[
        "fit",
        "--x", x.to_str().unwrap(),
        "--y", short_y.to_str().unwrap(),
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&inconsistent), 4, "{}", stderr(&inconsistent));
}

#[test]
fn cv_reports_curve_and_breaks_ties_upward() {
    let dir = TempDir::new().unwrap();
    let (x, _, y) = write_dataset(dir.path(), &fixture_spec(false), 53);
    let curve = dir.path().join("curve.csv");
    // Two penalties large enough that both fits are empty, hence tied;
    // the tie must resolve to the larger penalty.
    let cv = catch(&[
        "cv",
        "--x", x.to_str().unwrap(),
        "--y", y.to_str().unwrap(),
        "--lambdas", "1000000000,900000000",
        "--folds", "4",
        "--out", curve.to_str().unwrap(),
    ]);
    assert_eq!(code(&cv), 0, "cv failed: {}", stderr(&cv));
    let out = stdout(&cv);
    assert_eq!(report_value(&out, "chosen_lambda").as_deref(), Some("1000000000"));
    assert_eq!(report_value(&out, "chosen_index").as_deref(), Some("0"));
    let table = fs::read_to_string(&curve).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "lambda,cv_error");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1000000000,"), "grid order preserved");

    // One fold is not cross-validation; more folds than the smallest class
    // leaves some fold without that class.
    let one_fold = catch(&[
        "cv",
        "--x", x.to_str().unwrap(),
        "--y", y.to_str().unwrap(),
        "--folds", "1",
    ]);
    assert_eq!(code(&one_fold), 2, "{}", stderr(&one_fold));
    let too_many = catch(&[
        "cv",
        "--x", x.to_str().unwrap(),
        "--y", y.to_str().unwrap(),
        "--folds", "25",
    ]);
    assert_eq!(code(&too_many), 4, "{}", stderr(&too_many));
}

#[test]
fn simulate_runs_designs_and_validates_flags() {
    let dir = TempDir::new().unwrap();
    // A design with no class differences: the population rule ties on
    // every observation and errs on everything outside the first class.
    let design = dir.path().join("flat.txt");
    fs::write(&design, "name = flat\nshape = 3,3\nclass_sizes = 15,15\ntest_size = 400\n").unwrap();
    let config = dir.path().join("sim.conf");
    fs::write(&config, "seed = 7\nreplicates = 2\n").unwrap();

    let args = [
        "simulate",
        "--spec", design.to_str().unwrap(),
        "--methods", "bayes",
        "--config", config.to_str().unwrap(),
    ];
    let run = catch(&args);
    assert_eq!(code(&run), 0, "simulate failed: {}", stderr(&run));
    let table = stdout(&run);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,model,mean_error,se_error,mean_tpr,mean_fpr");
    assert_eq!(lines.len(), 2);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "bayes");
    assert_eq!(cells[1], "flat");
    let mean: f64 = cells[2].parse().unwrap();
    assert!((0.42..0.58).contains(&mean), "chance-level error, got {mean}");
    assert_eq!(cells[4], "", "no selection rates for the population rule");
    assert_eq!(cells[5], "");
    // Same seed, same configuration: byte-identical output.
    assert_eq!(stdout(&catch(&args)), table);

    let unseeded = catch(&["simulate", "--spec", design.to_str().unwrap()]);
    assert_eq!(code(&unseeded), 2);
    assert!(stderr(&unseeded).contains("seed"), "{}", stderr(&unseeded));

    let unknown = catch(&["simulate", "--model", "nope", "--seed", "1"]);
    assert_eq!(code(&unknown), 2);
    let listing = stderr(&unknown);
    assert!(listing.contains("M1") && listing.contains("C3"), "lists the catalog: {listing}");

    let both = catch(&[
        "simulate",
        "--model", "M1",
        "--spec", design.to_str().unwrap(),
        "--seed", "1",
    ]);
    assert_eq!(code(&both), 2);
    assert!(stderr(&both).contains("mutually exclusive"), "{}", stderr(&both));
}

#[test]
fn simulate_matches_published_bayes_anchor() {
    // The population rule on the first catalog matrix design: its error
    // is a known quantity, so ten replicates must land within one point.
    let run = catch(&[
        "simulate",
        "--model", "M1",
        "--methods", "bayes",
        "--replicates", "10",
        "--seed", "2024",
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let table = stdout(&run);
    let row = table.lines().nth(1).expect("one result row");
    let mean: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!(
        (mean - 0.1429).abs() < 0.01,
        "population-rule error {mean} should be within one point of 0.1429"
    );
}

#[test]
fn example1_table_and_config_precedence() {
    let run = catch(&["example1"]);
    assert_eq!(code(&run), 0);
    let table = stdout(&run);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "alpha,r_u,r_x11_u,r_x11,r_x");
    assert_eq!(lines.len(), 6, "default grid of five effect sizes");
    assert!(lines[1].starts_with("0,0.5,"), "covariate alone is uninformative: {}", lines[1]);
    let rows: Vec<Vec<f64>> = lines[1..]
        .iter()
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows[0][2], rows[0][3], "with no effect, adjustment changes nothing");
    for pair in rows.windows(2) {
        assert!(pair[1][3] >= pair[0][3], "unadjusted error grows with the effect");
    }
    assert!(rows[4][3] > 0.45, "unadjusted error approaches one half");

    // A config file supplies alphas, the flag overrides it.
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("ex.conf");
    fs::write(&config, "alphas = 1,2\n").unwrap();
    let merged = catch(&[
        "example1",
        "--config", config.to_str().unwrap(),
        "--alphas", "0",
    ]);
    assert_eq!(code(&merged), 0);
    assert_eq!(stdout(&merged).lines().count(), 2, "flag wins over the file");

    // Unknown configuration keys are rejected, not ignored.
    let stale = dir.path().join("stale.conf");
    fs::write(&stale, "alpha = 1\n").unwrap();
    let rejected = catch(&["example1", "--config", stale.to_str().unwrap()]);
    assert_eq!(code(&rejected), 2);
    assert!(stderr(&rejected).contains("\"alpha\""), "{}", stderr(&rejected));
}
