//! End-to-end estimation pipeline and the persistable fitted model.
//!
//! [`fit`] runs the closed-form stage (priors, covariate block, covariate
//! effects, adjusted means, mode covariances) and then the penalized solver
//! over a penalty grid. [`CatchModel`] packages everything the classifier
//! needs for one penalty value and round-trips through a directory of CSV
//! and CTB files.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::classifier;
use crate::estimation::{
    self, check_pd_condition, default_perturbation, perturb_sigma, CovariateBlock, Dataset,
    EstimationError,
};
use crate::io::{self, IoError};
use crate::solver::{self, FitPath, LambdaGrid, SingleFit, SolverConfig, SolverError};
use crate::tensor::{DenseTensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model: {reason}")]
    Invalid { reason: String },
    #[error("path index {index} out of range for {count} fitted penalties")]
    PathIndex { index: usize, count: usize },
}

fn invalid(reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        reason: reason.into(),
    }
}

/// Everything the closed-form stage estimates, before any penalty enters.
#[derive(Debug, Clone)]
pub struct EstimatedParams {
    pub priors: Vec<f64>,
    pub covariate_block: Option<CovariateBlock>,
    pub alpha: Option<DenseTensor>,
    /// Adjusted class means, one per class.
    pub mu: Vec<DenseTensor>,
    /// Per-mode covariance estimates, ridge-stabilized where the sample size
    /// cannot guarantee positive definiteness.
    pub sigmas: Vec<Array2<f64>>,
    /// Modes whose covariance received the ridge stabilizer.
    pub perturbed_modes: Vec<usize>,
    /// Vectorized mean differences against class 1, one row per class 2..=K.
    pub delta: Array2<f64>,
}

impl EstimatedParams {
    pub fn num_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn obs_shape(&self) -> &[usize] {
        self.mu[0].shape()
    }
}

/// Runs the closed-form stage on a dataset. With covariates present the
/// class means are adjusted for the estimated covariate effect; without
/// them the pipeline reduces to plain tensor discriminant analysis.
pub fn estimate_params(data: &Dataset) -> Result<EstimatedParams, ModelError> {
    let priors = estimation::estimate_priors(data);
    let (covariate_block, alpha) = match data.covariates() {
        Some(_) => {
            let block = estimation::estimate_covariate_block(data)?;
            let alpha = estimation::estimate_alpha(data)?;
            (Some(block), Some(alpha))
        }
        None => (None, None),
    };
    let mu = estimation::estimate_mu(data, alpha.as_ref())?;
    let resid = estimation::residuals(data, alpha.as_ref())?;
    let var_ref = estimation::pooled_first_entry_variance(&resid);
    let estimates = estimation::estimate_sigmas(&resid, var_ref)?;
    let mut sigmas = estimates.sigmas;
    let shape = data.obs_shape().to_vec();
    let pd = check_pd_condition(data.n(), data.num_classes(), &shape);
    let mut perturbed_modes = Vec::new();
    for (m, ok) in pd.iter().enumerate() {
        if !ok {
            let gamma = default_perturbation(&sigmas[m]);
            sigmas[m] = perturb_sigma(&sigmas[m], gamma);
            perturbed_modes.push(m);
        }
    }
    let p = data.obs_elements();
    let k = data.num_classes();
    let mut delta = Array2::zeros((k - 1, p));
    for row in 0..k - 1 {
        let target = mu[row + 1].data();
        let base = mu[0].data();
        for j in 0..p {
            delta[(row, j)] = target[j] - base[j];
        }
    }
    Ok(EstimatedParams {
        priors,
        covariate_block,
        alpha,
        mu,
        sigmas,
        perturbed_modes,
        delta,
    })
}

/// Controls for the penalized stage of [`fit`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Penalty grid. When omitted, 50 geometric values run from the largest
    /// useful penalty down to 0.05 of it, or down to 0.01 of it when the
    /// observations outnumber the tensor entries.
    pub lambdas: Option<LambdaGrid>,
    pub tol: f64,
    pub max_sweeps: usize,
    pub trace_objective: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambdas: None,
            tol: 1e-6,
            max_sweeps: 500,
            trace_objective: false,
        }
    }
}

impl FitConfig {
    /// Resolves the data-dependent defaults into a concrete solver config.
    pub fn resolve(&self, n: usize, num_entries: usize) -> SolverConfig {
        let lambdas = self.lambdas.clone().unwrap_or(LambdaGrid::Auto {
            count: 50,
            min_ratio: if n > num_entries { 0.01 } else { 0.05 },
        });
        SolverConfig {
            lambdas,
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            trace_objective: self.trace_objective,
        }
    }
}

/// A fitted path: the closed-form parameters plus one solver fit per
/// penalty value.
#[derive(Debug, Clone)]
pub struct CatchFit {
    pub params: EstimatedParams,
    pub path: FitPath,
}

impl CatchFit {
    /// Assembles the classifier-ready model for one path entry.
    pub fn model_at(&self, index: usize) -> Result<CatchModel, ModelError> {
        let count = self.path.fits.len();
        let single = self
            .path
            .fits
            .get(index)
            .ok_or(ModelError::PathIndex { index, count })?;
        model_from_fit(&self.params, single)
    }
}

/// Full pipeline: closed-form estimation followed by the penalized solver
/// across the penalty grid, warm-started from large penalties down.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<CatchFit, ModelError> {
    let params = estimate_params(data)?;
    let solver_config = config.resolve(data.n(), data.obs_elements());
    let inputs = solver::SolverInputs {
        sigmas: &params.sigmas,
        delta: &params.delta,
    };
    let path = solver::fit_path(&inputs, &solver_config)?;
    Ok(CatchFit { params, path })
}

/// Builds the single-penalty model from estimated parameters and one solver
/// fit: coefficient tensors from the beta rows, intercepts from the
/// discriminant formula.
pub fn model_from_fit(
    params: &EstimatedParams,
    single: &SingleFit,
) -> Result<CatchModel, ModelError> {
    model_from_beta(params, &single.beta)
}

/// Builds a model from estimated parameters and an explicit coefficient
/// matrix with one row per contrast class and one column per tensor entry.
pub fn model_from_beta(
    params: &EstimatedParams,
    beta: &Array2<f64>,
) -> Result<CatchModel, ModelError> {
    let shape = params.obs_shape().to_vec();
    let k = params.num_classes();
    if beta.nrows() != k - 1 || beta.ncols() != shape.iter().product::<usize>() {
        return Err(ModelError::Invalid {
            reason: format!(
                "coefficient matrix is {}x{} but the model needs {}x{}",
                beta.nrows(),
                beta.ncols(),
                k - 1,
                shape.iter().product::<usize>()
            ),
        });
    }
    let mut b = Vec::with_capacity(k - 1);
    for row in 0..k - 1 {
        b.push(DenseTensor::new(shape.clone(), beta.row(row).to_vec())?);
    }
    let intercepts = classifier::compute_intercepts(
        &params.priors,
        params.covariate_block.as_ref(),
        &params.mu,
        &b,
    )?;
    let model = CatchModel {
        priors: params.priors.clone(),
        covariate_block: params.covariate_block.clone(),
        alpha: params.alpha.clone(),
        mu: params.mu.clone(),
        sigmas: params.sigmas.clone(),
        b,
        intercepts,
    };
    model.validate()?;
    Ok(model)
}

/// A fitted classifier for one penalty value: class priors, the optional
/// covariate block and covariate-effect tensor, adjusted class means,
/// per-mode covariances, the sparse coefficient tensors for classes 2..=K,
/// and the matching discriminant intercepts (class 1 pinned at zero).
#[derive(Debug, Clone)]
pub struct CatchModel {
    pub priors: Vec<f64>,
    pub covariate_block: Option<CovariateBlock>,
    pub alpha: Option<DenseTensor>,
    pub mu: Vec<DenseTensor>,
    pub sigmas: Vec<Array2<f64>>,
    /// Coefficient tensors for classes 2..=K, in class order.
    pub b: Vec<DenseTensor>,
    /// Discriminant intercepts for classes 1..=K; the first is exactly zero.
    pub intercepts: Vec<f64>,
}

impl CatchModel {
    pub fn num_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn obs_shape(&self) -> &[usize] {
        self.mu[0].shape()
    }

    pub fn order(&self) -> usize {
        self.mu[0].order()
    }

    /// Number of covariates the model adjusts for, zero when it was fit
    /// without covariates.
    pub fn num_covariates(&self) -> usize {
        self.covariate_block
            .as_ref()
            .map(|b| b.phi.ncols())
            .unwrap_or(0)
    }

    pub fn has_covariates(&self) -> bool {
        self.covariate_block.is_some()
    }

    /// Structural consistency checks; run after assembly and after loading.
    pub fn validate(&self) -> Result<(), ModelError> {
        let k = self.priors.len();
        if k < 2 {
            return Err(invalid("need at least two classes"));
        }
        if self.priors.iter().any(|&p| !(p > 0.0)) {
            return Err(invalid("priors must all be positive"));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("priors sum to {total}, not 1")));
        }
        if self.mu.len() != k {
            return Err(invalid(format!(
                "{} mean tensors for {k} classes",
                self.mu.len()
            )));
        }
        let shape = self.mu[0].shape().to_vec();
        for (i, m) in self.mu.iter().enumerate() {
            if m.shape() != shape.as_slice() {
                return Err(invalid(format!("mean tensor {} shape mismatch", i + 1)));
            }
        }
        if self.sigmas.len() != shape.len() {
            return Err(invalid(format!(
                "{} covariance factors for a {}-way model",
                self.sigmas.len(),
                shape.len()
            )));
        }
        for (m, sigma) in self.sigmas.iter().enumerate() {
            if sigma.nrows() != shape[m] || sigma.ncols() != shape[m] {
                return Err(invalid(format!(
                    "covariance factor {} is {}x{}, expected {}x{}",
                    m + 1,
                    sigma.nrows(),
                    sigma.ncols(),
                    shape[m],
                    shape[m]
                )));
            }
            for i in 0..sigma.nrows() {
                for j in 0..i {
                    let gap = (sigma[(i, j)] - sigma[(j, i)]).abs();
                    if gap > 1e-8 * (1.0 + sigma[(i, j)].abs()) {
                        return Err(invalid(format!("covariance factor {} asymmetric", m + 1)));
                    }
                }
            }
        }
        if self.b.len() != k - 1 {
            return Err(invalid(format!(
                "{} coefficient tensors for {k} classes",
                self.b.len()
            )));
        }
        for (i, t) in self.b.iter().enumerate() {
            if t.shape() != shape.as_slice() {
                return Err(invalid(format!(
                    "coefficient tensor for class {} shape mismatch",
                    i + 2
                )));
            }
        }
        if self.intercepts.len() != k {
            return Err(invalid(format!(
                "{} intercepts for {k} classes",
                self.intercepts.len()
            )));
        }
        if self.intercepts[0] != 0.0 {
            return Err(invalid("class-1 intercept must be zero"));
        }
        match (&self.covariate_block, &self.alpha) {
            (None, None) => {}
            (Some(block), Some(alpha)) => {
                let q = block.phi.ncols();
                if q == 0 {
                    return Err(invalid("covariate block with zero covariates"));
                }
                if block.phi.nrows() != k || block.gamma.nrows() != k {
                    return Err(invalid("covariate means and coefficients need one row per class"));
                }
                if block.psi.nrows() != q || block.psi.ncols() != q {
                    return Err(invalid("covariate covariance shape mismatch"));
                }
                if block.gamma.ncols() != q {
                    return Err(invalid("covariate coefficient shape mismatch"));
                }
                if block.gamma.row(0).iter().any(|&g| g != 0.0) {
                    return Err(invalid("class-1 covariate coefficients must be zero"));
                }
                let expected: Vec<usize> =
                    shape.iter().copied().chain(std::iter::once(q)).collect();
                if alpha.shape() != expected.as_slice() {
                    return Err(invalid(format!(
                        "covariate-effect tensor shape {:?}, expected {:?}",
                        alpha.shape(),
                        expected
                    )));
                }
            }
            _ => {
                return Err(invalid(
                    "covariate block and covariate-effect tensor must be present together",
                ));
            }
        }
        Ok(())
    }
}

/// Writes a model as a directory: `priors.csv`, `intercepts.csv`,
/// `mu_<k>.ctb` and `B_<k>.ctb` per class, `sigma_<m>.csv` per mode, and
/// (for covariate models) `phi.csv`, `psi.csv`, `gamma.csv`, `alpha.ctb`.
pub fn save_model(model: &CatchModel, dir: &Path) -> Result<(), ModelError> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    io::write_csv_vector(&dir.join("priors.csv"), &model.priors)?;
    io::write_csv_vector(&dir.join("intercepts.csv"), &model.intercepts)?;
    for (i, m) in model.mu.iter().enumerate() {
        io::write_ctb(&dir.join(format!("mu_{}.ctb", i + 1)), m)?;
    }
    for (m, sigma) in model.sigmas.iter().enumerate() {
        io::write_csv_matrix(&dir.join(format!("sigma_{}.csv", m + 1)), sigma)?;
    }
    for (i, t) in model.b.iter().enumerate() {
        io::write_ctb(&dir.join(format!("B_{}.ctb", i + 2)), t)?;
    }
    if let (Some(block), Some(alpha)) = (&model.covariate_block, &model.alpha) {
        io::write_csv_matrix(&dir.join("phi.csv"), &block.phi)?;
        io::write_csv_matrix(&dir.join("psi.csv"), &block.psi)?;
        io::write_csv_matrix(&dir.join("gamma.csv"), &block.gamma)?;
        io::write_ctb(&dir.join("alpha.ctb"), alpha)?;
    }
    Ok(())
}

/// Reads a model directory written by [`save_model`]. The class count comes
/// from `priors.csv`, the tensor order from `mu_1.ctb`; the covariate files
/// must be present all together or not at all.
pub fn load_model(dir: &Path) -> Result<CatchModel, ModelError> {
    let priors = io::read_csv_vector(&dir.join("priors.csv"))?;
    let k = priors.len();
    if k < 2 {
        return Err(invalid("priors file lists fewer than two classes"));
    }
    let intercepts = io::read_csv_vector(&dir.join("intercepts.csv"))?;
    let mut mu = Vec::with_capacity(k);
    for i in 1..=k {
        mu.push(io::read_ctb(&dir.join(format!("mu_{i}.ctb")))?);
    }
    let order = mu[0].order();
    let mut sigmas = Vec::with_capacity(order);
    for m in 1..=order {
        sigmas.push(io::read_csv_matrix(&dir.join(format!("sigma_{m}.csv")))?);
    }
    let mut b = Vec::with_capacity(k - 1);
    for i in 2..=k {
        b.push(io::read_ctb(&dir.join(format!("B_{i}.ctb")))?);
    }
    let covariate_paths = [
        dir.join("phi.csv"),
        dir.join("psi.csv"),
        dir.join("gamma.csv"),
        dir.join("alpha.ctb"),
    ];
    let present = covariate_paths.iter().filter(|p| p.exists()).count();
    let (covariate_block, alpha) = match present {
        0 => (None, None),
        4 => {
            let phi = io::read_csv_matrix(&covariate_paths[0])?;
            let psi = io::read_csv_matrix(&covariate_paths[1])?;
            let gamma = io::read_csv_matrix(&covariate_paths[2])?;
            let alpha = io::read_ctb(&covariate_paths[3])?;
            (Some(CovariateBlock { phi, psi, gamma }), Some(alpha))
        }
        _ => {
            return Err(invalid(
                "covariate files (phi.csv, psi.csv, gamma.csv, alpha.ctb) are incomplete",
            ));
        }
    };
    let model = CatchModel {
        priors,
        covariate_block,
        alpha,
        mu,
        sigmas,
        b,
        intercepts,
    };
    model.validate()?;
    Ok(model)
}
