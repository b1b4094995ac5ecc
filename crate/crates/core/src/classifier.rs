//! The discriminant-rule classifier built from a fitted model, plus
//! evaluation metrics and cross-validated penalty selection.
//!
//! Class scores follow the multiclass discriminant rule relative to class 1:
//! `score_k = a_k + gamma_k' u + <B_k, x - alpha xbar u>` with `score_1 = 0`,
//! where the covariate terms drop out for models fit without covariates.
//! Ties break toward the smallest class label.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::estimation::{CovariateBlock, Dataset, EstimationError};
use crate::model::{self, CatchModel, EstimatedParams, FitConfig, ModelError};
use crate::solver::{self, LambdaGrid};
use crate::tensor::DenseTensor;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("observation shape {got:?} does not match model shape {expected:?}")]
    ShapeMismatch { got: Vec<usize>, expected: Vec<usize> },
    #[error("model adjusts for covariates but none were supplied")]
    CovariatesRequired,
    #[error("model was fit without covariates but covariates were supplied")]
    CovariatesUnsupported,
    #[error("covariate vector has length {got}, model expects {expected}")]
    CovariateLength { got: usize, expected: usize },
    #[error("true positive rate is undefined for an empty true set")]
    EmptyTrueSet,
    #[error("position {position} out of range for {total} positions")]
    PositionOutOfRange { position: usize, total: usize },
    #[error("need at least two folds, got {folds}")]
    TooFewFolds { folds: usize },
    #[error("class {class} has {count} observations, fewer than {folds} folds")]
    ClassTooSmallForFolds {
        class: usize,
        count: usize,
        folds: usize,
    },
    #[error(transparent)]
    Fit(#[from] ModelError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

/// One classified observation: the predicted label and the per-class
/// discriminant scores (class 1 pinned at zero).
#[derive(Debug, Clone)]
pub struct Prediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

/// Discriminant intercepts for all classes from the model parts:
/// `a_k = log(pi_k/pi_1) - 1/2 gamma_k'(phi_k + phi_1) - <B_k, (mu_k + mu_1)/2>`,
/// with the covariate term omitted when there is no covariate block. The
/// class-1 intercept is zero by construction.
pub fn compute_intercepts(
    priors: &[f64],
    block: Option<&CovariateBlock>,
    mu: &[DenseTensor],
    b: &[DenseTensor],
) -> Result<Vec<f64>, ModelError> {
    let k = priors.len();
    if mu.len() != k || b.len() != k - 1 {
        return Err(ModelError::Invalid {
            reason: format!(
                "intercepts need {k} means and {} coefficient tensors, got {} and {}",
                k - 1,
                mu.len(),
                b.len()
            ),
        });
    }
    let mut out = Vec::with_capacity(k);
    out.push(0.0);
    let base = mu[0].data();
    for c in 1..k {
        let mut a = (priors[c] / priors[0]).ln();
        if let Some(block) = block {
            for t in 0..block.phi.ncols() {
                a -= 0.5 * block.gamma[(c, t)] * (block.phi[(c, t)] + block.phi[(0, t)]);
            }
        }
        let coef = b[c - 1].data();
        let target = mu[c].data();
        if coef.len() != base.len() || target.len() != base.len() {
            return Err(ModelError::Invalid {
                reason: format!("coefficient or mean tensor for class {} has wrong size", c + 1),
            });
        }
        let mut ip = 0.0;
        for e in 0..coef.len() {
            ip += coef[e] * 0.5 * (target[e] + base[e]);
        }
        out.push(a - ip);
    }
    Ok(out)
}

/// Predicted label for a score vector: the largest score wins, ties go to
/// the smallest class label.
pub fn argmax_label(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best + 1
}

fn check_covariates(model: &CatchModel, u: Option<&[f64]>) -> Result<(), ClassifierError> {
    match (model.has_covariates(), u) {
        (true, None) => Err(ClassifierError::CovariatesRequired),
        (false, Some(_)) => Err(ClassifierError::CovariatesUnsupported),
        (true, Some(u)) => {
            let q = model.num_covariates();
            if u.len() != q {
                Err(ClassifierError::CovariateLength {
                    got: u.len(),
                    expected: q,
                })
            } else {
                Ok(())
            }
        }
        (false, None) => Ok(()),
    }
}

/// Scores for one observation given as a raw entry slice. `adjusted` is a
/// scratch buffer reused across calls. Inputs are assumed validated.
fn score_slices(
    model: &CatchModel,
    x: &[f64],
    u: Option<&[f64]>,
    adjusted: &mut Vec<f64>,
) -> Vec<f64> {
    let p = x.len();
    adjusted.clear();
    adjusted.extend_from_slice(x);
    if let (Some(alpha), Some(u)) = (&model.alpha, u) {
        let alpha_data = alpha.data();
        for (t, &ut) in u.iter().enumerate() {
            if ut == 0.0 {
                continue;
            }
            let fiber = &alpha_data[t * p..(t + 1) * p];
            for (slot, &a) in adjusted.iter_mut().zip(fiber) {
                *slot -= ut * a;
            }
        }
    }
    let k = model.num_classes();
    let mut scores = Vec::with_capacity(k);
    scores.push(0.0);
    for c in 1..k {
        let mut s = model.intercepts[c];
        if let (Some(block), Some(u)) = (&model.covariate_block, u) {
            for (t, &ut) in u.iter().enumerate() {
                s += block.gamma[(c, t)] * ut;
            }
        }
        let coef = model.b[c - 1].data();
        for (slot, &a) in coef.iter().zip(adjusted.iter()) {
            s += slot * a;
        }
        scores.push(s);
    }
    scores
}

/// Discriminant scores for one observation; class 1 is always zero.
pub fn scores(
    model: &CatchModel,
    x: &DenseTensor,
    u: Option<&[f64]>,
) -> Result<Vec<f64>, ClassifierError> {
    if x.shape() != model.obs_shape() {
        return Err(ClassifierError::ShapeMismatch {
            got: x.shape().to_vec(),
            expected: model.obs_shape().to_vec(),
        });
    }
    check_covariates(model, u)?;
    let mut scratch = Vec::new();
    Ok(score_slices(model, x.data(), u, &mut scratch))
}

/// Classifies one observation.
pub fn classify(
    model: &CatchModel,
    x: &DenseTensor,
    u: Option<&[f64]>,
) -> Result<Prediction, ClassifierError> {
    let scores = scores(model, x, u)?;
    Ok(Prediction {
        label: argmax_label(&scores),
        scores,
    })
}

/// Classifies every observation in a stack whose last mode indexes
/// observations, with one optional covariate row per observation. This is
/// the batch entry point used for streamed evaluation.
pub fn predict_stack(
    model: &CatchModel,
    stack: &DenseTensor,
    u: Option<&ndarray::Array2<f64>>,
) -> Result<Vec<Prediction>, ClassifierError> {
    let order = stack.order();
    if order != model.order() + 1 || stack.shape()[..order - 1] != *model.obs_shape() {
        return Err(ClassifierError::ShapeMismatch {
            got: stack.shape().to_vec(),
            expected: model.obs_shape().to_vec(),
        });
    }
    let n = stack.shape()[order - 1];
    if let Some(u) = u {
        if u.nrows() != n {
            return Err(ClassifierError::CovariateLength {
                got: u.nrows(),
                expected: n,
            });
        }
    }
    let p: usize = model.obs_shape().iter().product();
    let mut urow = Vec::new();
    let mut scratch = Vec::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let u = match u {
            Some(u) => {
                urow.clear();
                urow.extend(u.row(i).iter().copied());
                Some(urow.as_slice())
            }
            None => None,
        };
        check_covariates(model, u)?;
        let scores = score_slices(model, &stack.data()[i * p..(i + 1) * p], u, &mut scratch);
        out.push(Prediction {
            label: argmax_label(&scores),
            scores,
        });
    }
    Ok(out)
}

/// Classifies every observation of a dataset. The dataset must carry
/// covariates exactly when the model does.
pub fn predict_dataset(
    model: &CatchModel,
    data: &Dataset,
) -> Result<Vec<Prediction>, ClassifierError> {
    predict_stack(model, data.stack(), data.covariates())
}

/// Fraction of dataset observations the model misclassifies.
pub fn error_rate(model: &CatchModel, data: &Dataset) -> Result<f64, ClassifierError> {
    let predictions = predict_dataset(model, data)?;
    let wrong = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, &y)| p.label != y)
        .count();
    Ok(wrong as f64 / data.n() as f64)
}

/// Support-recovery quality of an estimated position set against the true
/// one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionMetrics {
    /// Fraction of true positions recovered.
    pub tpr: f64,
    /// Fraction of null positions selected.
    pub fpr: f64,
}

/// True and false positive rates of `estimated` against `truth` over
/// positions `0..total`. Inputs are treated as sets (duplicates ignored).
/// When every position is truly active the false positive rate is zero by
/// convention (there are no null positions).
pub fn selection_metrics(
    estimated: &[usize],
    truth: &[usize],
    total: usize,
) -> Result<SelectionMetrics, ClassifierError> {
    for &pos in estimated.iter().chain(truth) {
        if pos >= total {
            return Err(ClassifierError::PositionOutOfRange {
                position: pos,
                total,
            });
        }
    }
    let truth: BTreeSet<usize> = truth.iter().copied().collect();
    if truth.is_empty() {
        return Err(ClassifierError::EmptyTrueSet);
    }
    let estimated: BTreeSet<usize> = estimated.iter().copied().collect();
    let hits = estimated.intersection(&truth).count();
    let false_hits = estimated.len() - hits;
    let nulls = total - truth.len();
    let fpr = if nulls == 0 {
        0.0
    } else {
        false_hits as f64 / nulls as f64
    };
    Ok(SelectionMetrics {
        tpr: hits as f64 / truth.len() as f64,
        fpr,
    })
}

/// Cross-validation report: the shared penalty grid, the mean held-out
/// error per penalty, and the selected entry.
#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub lambdas: Vec<f64>,
    pub mean_errors: Vec<f64>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
}

/// Stratified K-fold selection of the penalty. The grid is fixed once from
/// the full dataset, every fold refits the whole pipeline on its training
/// part, and held-out errors are pooled per penalty. Ties break toward the
/// larger penalty (the sparser model). Class members are dealt round-robin
/// to folds, so every class must have at least `folds` observations.
pub fn cross_validate(
    data: &Dataset,
    config: &FitConfig,
    folds: usize,
) -> Result<CrossValidation, ClassifierError> {
    if folds < 2 {
        return Err(ClassifierError::TooFewFolds { folds });
    }
    for (class, count) in data.class_counts().iter().enumerate() {
        if *count < folds {
            return Err(ClassifierError::ClassTooSmallForFolds {
                class: class + 1,
                count: *count,
                folds,
            });
        }
    }
    // Fix the grid from the full data so every fold scores the same
    // penalties.
    let full_params = model::estimate_params(data)?;
    let solver_config = config.resolve(data.n(), data.obs_elements());
    let inputs = solver::SolverInputs {
        sigmas: &full_params.sigmas,
        delta: &full_params.delta,
    };
    let grid = solver::lambda_grid(&inputs, &solver_config).map_err(ModelError::from)?;

    let mut fold_of = vec![0usize; data.n()];
    for class in 1..=data.num_classes() {
        for (rank, &i) in data.class_members(class).iter().enumerate() {
            fold_of[i] = rank % folds;
        }
    }
    let fold_config = FitConfig {
        lambdas: Some(LambdaGrid::Explicit(grid.clone())),
        ..config.clone()
    };
    let mut wrong = vec![0usize; grid.len()];
    for fold in 0..folds {
        let train_idx: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] != fold).collect();
        let test_idx: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] == fold).collect();
        let train = data.subset(&train_idx)?;
        let test = data.subset(&test_idx)?;
        let fitted = model::fit(&train, &fold_config)?;
        for (slot, single) in wrong.iter_mut().zip(&fitted.path.fits) {
            let fold_model = model::model_from_fit(&fitted.params, single)?;
            let predictions = predict_dataset(&fold_model, &test)?;
            *slot += predictions
                .iter()
                .zip(test.labels())
                .filter(|(p, &y)| p.label != y)
                .count();
        }
    }
    let mean_errors: Vec<f64> = wrong.iter().map(|&w| w as f64 / data.n() as f64).collect();
    let mut chosen_index = 0;
    for i in 1..grid.len() {
        let better = wrong[i] < wrong[chosen_index]
            || (wrong[i] == wrong[chosen_index] && grid[i] > grid[chosen_index]);
        if better {
            chosen_index = i;
        }
    }
    Ok(CrossValidation {
        chosen_lambda: grid[chosen_index],
        lambdas: grid,
        mean_errors,
        chosen_index,
    })
}

/// Convenience used by the command-line front end: cross-validate, then
/// refit on the full data at the chosen penalty only.
pub fn fit_with_cv(
    data: &Dataset,
    config: &FitConfig,
    folds: usize,
) -> Result<(CatchModel, CrossValidation, EstimatedParams), ClassifierError> {
    let cv = cross_validate(data, config, folds)?;
    let final_config = FitConfig {
        lambdas: Some(LambdaGrid::Explicit(vec![cv.chosen_lambda])),
        ..config.clone()
    };
    let fitted = model::fit(data, &final_config)?;
    let chosen = model::model_from_fit(&fitted.params, &fitted.path.fits[0])?;
    Ok((chosen, cv, fitted.params))
}
