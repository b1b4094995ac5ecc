//! Moment estimators for the model parameters.
//!
//! A labeled sample is a stack of order-`M` observation tensors (stored as
//! one order-`M+1` tensor whose last mode runs over observations), an
//! optional `n x q` covariate matrix and class labels `1..=K`. Estimation
//! proceeds in dependency order: class priors, the covariate block
//! (class-wise covariate means, their pooled covariance and the implied
//! linear discriminant directions), the covariate-effect tensor, adjusted
//! class means, residuals, and finally the per-mode covariance estimates.

use ndarray::Array2;
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::tensor::{DenseTensor, TensorError};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("observation stack must have at least 2 modes (tensor modes plus the observation mode)")]
    OrderTooLow,
    #[error("label stack has {labels} entries but the last tensor mode has extent {observations}")]
    ObservationCount { labels: usize, observations: usize },
    #[error("covariate matrix has {rows} rows, expected {expected}")]
    CovariateRows { rows: usize, expected: usize },
    #[error("covariate matrix has zero columns")]
    NoCovariateColumns,
    #[error("class {label} has no observations (labels must cover 1..=K)")]
    MissingClass { label: usize },
    #[error("labels must name at least two classes")]
    SingleClass,
    #[error("operation requires covariates but the sample has none")]
    MissingCovariates,
    #[error("need at least {needed} observations, have {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("{what} is singular or not positive definite: {source}")]
    Singular { what: String, source: LinalgError },
    #[error("mode {mode} residual second moment has nonpositive leading entry {value}")]
    DegenerateResiduals { mode: usize, value: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A labeled sample. Observations are the last mode of `x`, so each
/// observation is one contiguous block of `vec` order.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DenseTensor,
    u: Option<Array2<f64>>,
    y: Vec<usize>,
    num_classes: usize,
    members: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        x: DenseTensor,
        u: Option<Array2<f64>>,
        y: Vec<usize>,
    ) -> Result<Self, EstimationError> {
        if x.order() < 2 {
            return Err(EstimationError::OrderTooLow);
        }
        let n = *x.shape().last().unwrap();
        if y.len() != n {
            return Err(EstimationError::ObservationCount {
                labels: y.len(),
                observations: n,
            });
        }
        if let Some(u) = &u {
            if u.nrows() != n {
                return Err(EstimationError::CovariateRows {
                    rows: u.nrows(),
                    expected: n,
                });
            }
            if u.ncols() == 0 {
                return Err(EstimationError::NoCovariateColumns);
            }
        }
        let num_classes = y.iter().copied().max().unwrap_or(0);
        if num_classes < 2 {
            return Err(EstimationError::SingleClass);
        }
        let mut members = vec![Vec::new(); num_classes];
        for (i, &label) in y.iter().enumerate() {
            members[label - 1].push(i);
        }
        if let Some(k) = members.iter().position(|m| m.is_empty()) {
            return Err(EstimationError::MissingClass { label: k + 1 });
        }
        Ok(Self {
            x,
            u,
            y,
            num_classes,
            members,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Shape of a single observation (the first `M` modes of the stack).
    pub fn obs_shape(&self) -> &[usize] {
        let order = self.x.order();
        &self.x.shape()[..order - 1]
    }

    pub fn obs_elements(&self) -> usize {
        self.obs_shape().iter().product()
    }

    /// Observation `i` as a contiguous slice in `vec` order.
    pub fn obs(&self, i: usize) -> &[f64] {
        let p = self.obs_elements();
        &self.x.data()[i * p..(i + 1) * p]
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn covariates(&self) -> Option<&Array2<f64>> {
        self.u.as_ref()
    }

    pub fn num_covariates(&self) -> usize {
        self.u.as_ref().map_or(0, |u| u.ncols())
    }

    pub fn stack(&self) -> &DenseTensor {
        &self.x
    }

    /// Indices of the observations in class `k` (one-based class label).
    pub fn class_members(&self, k: usize) -> &[usize] {
        &self.members[k - 1]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.len()).collect()
    }

    /// Drops the covariates, keeping tensors and labels.
    pub fn without_covariates(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            u: None,
            y: self.y.clone(),
            num_classes: self.num_classes,
            members: self.members.clone(),
        }
    }

    /// New dataset from a subset of observation indices (used by
    /// cross-validation). Labels must still cover every class.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, EstimationError> {
        let p = self.obs_elements();
        let mut shape = self.obs_shape().to_vec();
        shape.push(indices.len().max(1));
        let mut data = Vec::with_capacity(p * indices.len());
        for &i in indices {
            data.extend_from_slice(self.obs(i));
        }
        let x = DenseTensor::new(shape, data)?;
        let u = self.u.as_ref().map(|u| {
            let mut sub = Array2::zeros((indices.len(), u.ncols()));
            for (row, &i) in indices.iter().enumerate() {
                sub.row_mut(row).assign(&u.row(i));
            }
            sub
        });
        let y: Vec<usize> = indices.iter().map(|&i| self.y[i]).collect();
        Dataset::new(x, u, y)
    }
}

/// Sample class proportions `n_k / n`, indexed by class label minus one.
pub fn estimate_priors(data: &Dataset) -> Vec<f64> {
    let n = data.n() as f64;
    data.class_counts()
        .iter()
        .map(|&c| c as f64 / n)
        .collect()
}

/// Covariate side of the model: per-class covariate means `phi` (rows are
/// classes), their pooled within-class covariance `psi` (normalized by `n`),
/// and the discriminant directions `gamma_k = psi^{-1} (phi_k - phi_1)`
/// (first row identically zero).
#[derive(Debug, Clone)]
pub struct CovariateBlock {
    pub phi: Array2<f64>,
    pub psi: Array2<f64>,
    pub gamma: Array2<f64>,
}

pub fn estimate_covariate_block(data: &Dataset) -> Result<CovariateBlock, EstimationError> {
    let u = data.covariates().ok_or(EstimationError::MissingCovariates)?;
    let q = u.ncols();
    let k = data.num_classes();
    let mut phi = Array2::zeros((k, q));
    for class in 1..=k {
        let members = data.class_members(class);
        for &i in members {
            for j in 0..q {
                phi[(class - 1, j)] += u[(i, j)];
            }
        }
        let count = members.len() as f64;
        for j in 0..q {
            phi[(class - 1, j)] /= count;
        }
    }
    let mut psi = Array2::zeros((q, q));
    for (i, &label) in data.labels().iter().enumerate() {
        for a in 0..q {
            let da = u[(i, a)] - phi[(label - 1, a)];
            for b in 0..=a {
                let db = u[(i, b)] - phi[(label - 1, b)];
                psi[(a, b)] += da * db;
            }
        }
    }
    let n = data.n() as f64;
    for a in 0..q {
        for b in 0..=a {
            psi[(a, b)] /= n;
            psi[(b, a)] = psi[(a, b)];
        }
    }
    let mut diffs = Array2::zeros((q, k));
    for class in 2..=k {
        for j in 0..q {
            diffs[(j, class - 1)] = phi[(class - 1, j)] - phi[(0, j)];
        }
    }
    let solved = linalg::solve_spd(&psi, &diffs).map_err(|source| EstimationError::Singular {
        what: "pooled covariate covariance".to_string(),
        source,
    })?;
    let mut gamma = Array2::zeros((k, q));
    for class in 2..=k {
        for j in 0..q {
            gamma[(class - 1, j)] = solved[(j, class - 1)];
        }
    }
    Ok(CovariateBlock { phi, psi, gamma })
}

fn class_covariate_means(data: &Dataset) -> Array2<f64> {
    let u = data.covariates().expect("caller checked covariates");
    let q = u.ncols();
    let k = data.num_classes();
    let mut means = Array2::zeros((k, q));
    for class in 1..=k {
        let members = data.class_members(class);
        for &i in members {
            for j in 0..q {
                means[(class - 1, j)] += u[(i, j)];
            }
        }
        for j in 0..q {
            means[(class - 1, j)] /= members.len() as f64;
        }
    }
    means
}

fn class_tensor_means(data: &Dataset) -> Vec<Vec<f64>> {
    let p = data.obs_elements();
    let k = data.num_classes();
    let mut means = vec![vec![0.0; p]; k];
    for class in 1..=k {
        let members = data.class_members(class);
        let mean = &mut means[class - 1];
        for &i in members {
            for (slot, &v) in mean.iter_mut().zip(data.obs(i)) {
                *slot += v;
            }
        }
        let count = members.len() as f64;
        for slot in mean.iter_mut() {
            *slot /= count;
        }
    }
    means
}

/// Least-squares estimate of the covariate-effect tensor: the regression of
/// within-class-centered observations on within-class-centered covariates,
/// all covariates at once. Result shape is `(p_1, ..., p_M, q)`.
///
/// Equivalently, fiber `j` of the result solves the entrywise normal
/// equations `sum_i u~_i u~_i^T a_j = sum_i x~_{ij} u~_i`, pooled over
/// classes.
pub fn estimate_alpha(data: &Dataset) -> Result<DenseTensor, EstimationError> {
    let u = data.covariates().ok_or(EstimationError::MissingCovariates)?;
    let q = u.ncols();
    let n = data.n();
    if n <= q + data.num_classes() {
        return Err(EstimationError::TooFewObservations {
            needed: q + data.num_classes() + 1,
            got: n,
        });
    }
    let phi = class_covariate_means(data);
    // Centered covariates, one column per observation.
    let mut centered = Array2::zeros((q, n));
    for (i, &label) in data.labels().iter().enumerate() {
        for j in 0..q {
            centered[(j, i)] = u[(i, j)] - phi[(label - 1, j)];
        }
    }
    let gram = centered.dot(&centered.t());
    let weights = linalg::solve_spd(&gram, &centered).map_err(|source| {
        EstimationError::Singular {
            what: "centered covariate Gram matrix".to_string(),
            source,
        }
    })?;
    let tensor_means = class_tensor_means(data);
    let p = data.obs_elements();
    let mut alpha = vec![0.0; p * q];
    for (i, &label) in data.labels().iter().enumerate() {
        let obs = data.obs(i);
        let mean = &tensor_means[label - 1];
        for t in 0..q {
            let w = weights[(t, i)];
            if w == 0.0 {
                continue;
            }
            let block = &mut alpha[t * p..(t + 1) * p];
            for ((slot, &xv), &mv) in block.iter_mut().zip(obs).zip(mean) {
                *slot += w * (xv - mv);
            }
        }
    }
    let mut shape = data.obs_shape().to_vec();
    shape.push(q);
    Ok(DenseTensor::new(shape, alpha)?)
}

/// Adjusted class means: the raw class averages, minus the covariate effect
/// evaluated at the class covariate means when an effect tensor is given.
pub fn estimate_mu(
    data: &Dataset,
    alpha: Option<&DenseTensor>,
) -> Result<Vec<DenseTensor>, EstimationError> {
    let means = class_tensor_means(data);
    let shape = data.obs_shape().to_vec();
    let k = data.num_classes();
    let mut out = Vec::with_capacity(k);
    match alpha {
        None => {
            for mean in means {
                out.push(DenseTensor::new(shape.clone(), mean)?);
            }
        }
        Some(alpha) => {
            if data.covariates().is_none() {
                return Err(EstimationError::MissingCovariates);
            }
            let phi = class_covariate_means(data);
            let mode = alpha.order() - 1;
            for (class, mean) in means.into_iter().enumerate() {
                let ubar = phi.row(class).to_vec();
                let shift = alpha.mode_vector_product(mode, &ubar)?;
                let mut adjusted = mean;
                for (slot, &s) in adjusted.iter_mut().zip(shift.data()) {
                    *slot -= s;
                }
                out.push(DenseTensor::new(shape.clone(), adjusted)?);
            }
        }
    }
    Ok(out)
}

/// Residual stack: each observation minus its class mean, minus the
/// covariate effect at the centered covariates when `alpha` is given. The
/// result has the same shape as the observation stack and exactly zero
/// within-class mean.
pub fn residuals(
    data: &Dataset,
    alpha: Option<&DenseTensor>,
) -> Result<DenseTensor, EstimationError> {
    let p = data.obs_elements();
    let n = data.n();
    let tensor_means = class_tensor_means(data);
    let mut out = vec![0.0; p * n];
    for (i, &label) in data.labels().iter().enumerate() {
        let obs = data.obs(i);
        let mean = &tensor_means[label - 1];
        let block = &mut out[i * p..(i + 1) * p];
        for ((slot, &xv), &mv) in block.iter_mut().zip(obs).zip(mean) {
            *slot = xv - mv;
        }
    }
    if let Some(alpha) = alpha {
        let u = data.covariates().ok_or(EstimationError::MissingCovariates)?;
        let q = u.ncols();
        let phi = class_covariate_means(data);
        let alpha_data = alpha.data();
        for (i, &label) in data.labels().iter().enumerate() {
            let block = &mut out[i * p..(i + 1) * p];
            for t in 0..q {
                let centered = u[(i, t)] - phi[(label - 1, t)];
                if centered == 0.0 {
                    continue;
                }
                let fiber = &alpha_data[t * p..(t + 1) * p];
                for (slot, &a) in block.iter_mut().zip(fiber) {
                    *slot -= centered * a;
                }
            }
        }
    }
    let mut shape = data.obs_shape().to_vec();
    shape.push(n);
    Ok(DenseTensor::new(shape, out)?)
}

/// Pooled variance of the leading residual entry, normalized by the number
/// of observations. Residuals are already within-class centered, so this is
/// the mean square of entry `(0, ..., 0)` across observations.
pub fn pooled_first_entry_variance(residual_stack: &DenseTensor) -> f64 {
    let order = residual_stack.order();
    let n = residual_stack.shape()[order - 1];
    let p: usize = residual_stack.shape()[..order - 1].iter().product();
    let data = residual_stack.data();
    let mut sum = 0.0;
    for i in 0..n {
        let v = data[i * p];
        sum += v * v;
    }
    sum / n as f64
}

/// Per-mode covariance estimates with their fixed scaling.
#[derive(Debug, Clone)]
pub struct SigmaEstimates {
    /// One estimate per tensor mode, in mode order.
    pub sigmas: Vec<Array2<f64>>,
    /// Leading entries of the unscaled second-moment matrices, one per mode.
    pub raw_first_entries: Vec<f64>,
}

/// Mode-wise covariance estimation from the residual stack.
///
/// For each tensor mode `j`, the unscaled second moment is
/// `S_j = sum_i E_i(j) E_i(j)^T / (n * prod_{l != j} p_l)`. Every mode but
/// the last is normalized to a unit leading entry; the last mode is scaled
/// by `var_ref / prod_j S_j[0,0]` so the overall Kronecker scale tracks the
/// reference variance of the leading tensor entry.
pub fn estimate_sigmas(
    residual_stack: &DenseTensor,
    var_ref: f64,
) -> Result<SigmaEstimates, EstimationError> {
    let order = residual_stack.order();
    if order < 2 {
        return Err(EstimationError::OrderTooLow);
    }
    let num_modes = order - 1;
    let n = residual_stack.shape()[order - 1];
    let mut raw = Vec::with_capacity(num_modes);
    let mut sigmas = Vec::with_capacity(num_modes);
    for mode in 0..num_modes {
        let p_mode = residual_stack.shape()[mode];
        let unfolded = residual_stack.mode_matricize(mode)?;
        let cols = unfolded.ncols();
        debug_assert_eq!(cols % n, 0);
        let mut second_moment = unfolded.dot(&unfolded.t());
        let scale = 1.0 / cols as f64;
        for a in 0..p_mode {
            for b in 0..=a {
                let avg = 0.5 * (second_moment[(a, b)] + second_moment[(b, a)]) * scale;
                second_moment[(a, b)] = avg;
                second_moment[(b, a)] = avg;
            }
        }
        let leading = second_moment[(0, 0)];
        if !(leading > 0.0) {
            return Err(EstimationError::DegenerateResiduals {
                mode,
                value: leading,
            });
        }
        raw.push(leading);
        sigmas.push(second_moment);
    }
    let product: f64 = raw.iter().product();
    for (mode, sigma) in sigmas.iter_mut().enumerate() {
        let factor = if mode + 1 < num_modes {
            1.0 / raw[mode]
        } else {
            var_ref / product
        };
        sigma.mapv_inplace(|v| v * factor);
    }
    Ok(SigmaEstimates {
        sigmas,
        raw_first_entries: raw,
    })
}

/// Sample-size condition under which each mode's covariance estimate is
/// positive definite with probability one: mode `j` needs
/// `(n - K) * prod_{m != j} p_m > p_j`.
pub fn check_pd_condition(n: usize, num_classes: usize, shape: &[usize]) -> Vec<bool> {
    let total: u128 = shape.iter().map(|&p| p as u128).product();
    shape
        .iter()
        .map(|&p_j| {
            let others = total / p_j as u128;
            (n.saturating_sub(num_classes) as u128) * others > p_j as u128
        })
        .collect()
}

/// Ridge perturbation `sigma + gamma * I`, used when the positive
/// definiteness condition fails for a mode.
pub fn perturb_sigma(sigma: &Array2<f64>, gamma: f64) -> Array2<f64> {
    let mut out = sigma.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += gamma;
    }
    out
}

/// Default perturbation size: a small fraction of the mean diagonal entry.
pub fn default_perturbation(sigma: &Array2<f64>) -> f64 {
    let n = sigma.nrows();
    let mean_diag = (0..n).map(|i| sigma[(i, i)]).sum::<f64>() / n as f64;
    1e-4 * mean_diag
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
        (0..count).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn dummy_x(n: usize) -> DenseTensor {
        DenseTensor::zeros(vec![1, n]).unwrap()
    }

    #[test]
    fn priors_are_class_proportions() {
        let data = Dataset::new(dummy_x(4), None, vec![1, 1, 2, 2]).unwrap();
        assert_eq!(estimate_priors(&data), vec![0.5, 0.5]);
        let data = Dataset::new(dummy_x(4), None, vec![1, 2, 2, 2]).unwrap();
        assert_eq!(estimate_priors(&data), vec![0.25, 0.75]);
        let mut y = vec![1; 40];
        y.extend(vec![2; 200]);
        let data = Dataset::new(dummy_x(240), None, y).unwrap();
        let priors = estimate_priors(&data);
        assert_abs_diff_eq!(priors[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(priors[1], 5.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn dataset_validation_errors() {
        assert!(matches!(
            Dataset::new(dummy_x(3), None, vec![1, 1, 3]),
            Err(EstimationError::MissingClass { label: 2 })
        ));
        assert!(matches!(
            Dataset::new(dummy_x(3), None, vec![1, 1, 1]),
            Err(EstimationError::SingleClass)
        ));
        assert!(matches!(
            Dataset::new(dummy_x(3), None, vec![1, 2]),
            Err(EstimationError::ObservationCount { .. })
        ));
        let u = Array2::zeros((2, 1));
        assert!(matches!(
            Dataset::new(dummy_x(3), Some(u), vec![1, 2, 1]),
            Err(EstimationError::CovariateRows { .. })
        ));
    }

    #[test]
    fn covariate_block_with_equal_class_means_has_zero_gamma() {
        let u = arr2(&[[1.0], [3.0], [1.0], [3.0]]);
        let data = Dataset::new(dummy_x(4), Some(u), vec![1, 1, 2, 2]).unwrap();
        let block = estimate_covariate_block(&data).unwrap();
        assert_abs_diff_eq!(block.phi[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(block.phi[(1, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(block.psi[(0, 0)], 1.0, epsilon = 1e-15);
        assert_eq!(block.gamma[(0, 0)], 0.0);
        assert_abs_diff_eq!(block.gamma[(1, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn covariate_block_rejects_degenerate_covariates() {
        let u = arr2(&[[1.0], [1.0], [1.0], [1.0]]);
        let data = Dataset::new(dummy_x(4), Some(u), vec![1, 1, 2, 2]).unwrap();
        assert!(matches!(
            estimate_covariate_block(&data),
            Err(EstimationError::Singular { .. })
        ));
    }

    #[test]
    fn covariate_block_recovers_population_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1001);
        let n_per = 50_000;
        let mut uvals = Vec::with_capacity(2 * n_per);
        let mut y = Vec::with_capacity(2 * n_per);
        // Class 1: U ~ N(0,1); class 2: U ~ N(1.5, 1).
        for &(class, mean) in &[(1usize, 0.0), (2usize, 1.5)] {
            for _ in 0..n_per {
                let z: f64 = StandardNormal.sample(&mut rng);
                uvals.push(mean + z);
                y.push(class);
            }
        }
        let u = Array2::from_shape_vec((2 * n_per, 1), uvals).unwrap();
        let data = Dataset::new(dummy_x(2 * n_per), Some(u), y).unwrap();
        let block = estimate_covariate_block(&data).unwrap();
        assert_abs_diff_eq!(block.phi[(0, 0)], 0.0, epsilon = 0.05);
        assert_abs_diff_eq!(block.phi[(1, 0)], 1.5, epsilon = 0.05);
        assert_abs_diff_eq!(block.psi[(0, 0)], 1.0, epsilon = 0.05);
        assert_abs_diff_eq!(block.gamma[(1, 0)], 1.5, epsilon = 0.1);
    }

    #[test]
    fn alpha_requires_varying_covariates() {
        let u = arr2(&[[2.0], [2.0], [5.0], [5.0]]);
        // Constant within class: centered covariates vanish.
        let x = DenseTensor::new(vec![1, 4], vec![0.1, 0.4, -0.2, 0.9]).unwrap();
        let data = Dataset::new(x, Some(u), vec![1, 1, 2, 2]).unwrap();
        assert!(matches!(
            estimate_alpha(&data),
            Err(EstimationError::Singular { .. })
        ));
    }

    #[test]
    fn alpha_matches_entrywise_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = [2usize, 3];
        let p: usize = shape.iter().product();
        let n = 40;
        let q = 2;
        let mut xdata = normals(&mut rng, p * n);
        let udata = normals(&mut rng, n * q);
        let u = Array2::from_shape_vec((n, q), udata).unwrap();
        let y: Vec<usize> = (0..n).map(|i| 1 + (i % 2)).collect();
        // Inject a covariate effect so the estimate is nontrivial.
        for i in 0..n {
            for j in 0..p {
                xdata[i * p + j] += 0.7 * u[(i, 0)] * (j as f64 + 1.0);
            }
        }
        let x = DenseTensor::new(vec![2, 3, n], xdata).unwrap();
        let data = Dataset::new(x, Some(u.clone()), y.clone()).unwrap();
        let alpha = estimate_alpha(&data).unwrap();
        assert_eq!(alpha.shape(), &[2, 3, 2]);

        // Entrywise oracle: per tensor entry, ordinary least squares of the
        // centered entry on the centered covariates, pooled over classes.
        let phi = class_covariate_means(&data);
        let mut centered = Array2::zeros((q, n));
        for i in 0..n {
            for t in 0..q {
                centered[(t, i)] = u[(i, t)] - phi[(y[i] - 1, t)];
            }
        }
        let gram = centered.dot(&centered.t());
        let tensor_means = class_tensor_means(&data);
        for j in 0..p {
            let mut rhs = Array2::zeros((q, 1));
            for i in 0..n {
                let xc = data.obs(i)[j] - tensor_means[y[i] - 1][j];
                for t in 0..q {
                    rhs[(t, 0)] += centered[(t, i)] * xc;
                }
            }
            let coef = linalg::solve_spd(&gram, &rhs).unwrap();
            for t in 0..q {
                let got = alpha.data()[t * p + j];
                assert_abs_diff_eq!(got, coef[(t, 0)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn alpha_vanishes_when_covariates_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let p = 2;
        let xdata = normals(&mut rng, p * n);
        let udata = normals(&mut rng, n);
        let u = Array2::from_shape_vec((n, 1), udata).unwrap();
        let y: Vec<usize> = (0..n).map(|i| 1 + (i % 2)).collect();
        let x = DenseTensor::new(vec![2, n], xdata).unwrap();
        let data = Dataset::new(x, Some(u), y).unwrap();
        let alpha = estimate_alpha(&data).unwrap();
        for &a in alpha.data() {
            assert_abs_diff_eq!(a, 0.0, epsilon = 0.05);
        }
    }

    #[test]
    fn mu_without_covariate_effect_is_the_class_average() {
        let x = DenseTensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
            .unwrap();
        let data = Dataset::new(x, None, vec![1, 1, 2, 2]).unwrap();
        let mu = estimate_mu(&data, None).unwrap();
        assert_eq!(mu[0].data(), &[2.0, 3.0]);
        assert_eq!(mu[1].data(), &[6.0, 7.0]);
    }

    #[test]
    fn mu_subtracts_covariate_effect_at_class_covariate_means() {
        // Two observations per class, scalar entries, one covariate.
        // alpha = [2], so mu_k = mean_k - 2 * mean of u in class k.
        let x = DenseTensor::new(vec![1, 4], vec![1.0, 3.0, 10.0, 14.0]).unwrap();
        let u = arr2(&[[0.0], [1.0], [2.0], [4.0]]);
        let data = Dataset::new(x, Some(u), vec![1, 1, 2, 2]).unwrap();
        let alpha = DenseTensor::new(vec![1, 1], vec![2.0]).unwrap();
        let mu = estimate_mu(&data, Some(&alpha)).unwrap();
        assert_abs_diff_eq!(mu[0].data()[0], 2.0 - 2.0 * 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(mu[1].data()[0], 12.0 - 2.0 * 3.0, epsilon = 1e-14);
    }

    #[test]
    fn residuals_have_exactly_zero_class_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = 6;
        let n = 30;
        let xdata = normals(&mut rng, p * n);
        let udata = normals(&mut rng, n * 2);
        let u = Array2::from_shape_vec((n, 2), udata).unwrap();
        let y: Vec<usize> = (0..n).map(|i| 1 + (i % 3)).collect();
        let x = DenseTensor::new(vec![2, 3, n], xdata).unwrap();
        let data = Dataset::new(x, Some(u), y.clone()).unwrap();
        let alpha = estimate_alpha(&data).unwrap();
        let res = residuals(&data, Some(&alpha)).unwrap();
        for class in 1..=3 {
            let members = data.class_members(class);
            for j in 0..p {
                let total: f64 = members.iter().map(|&i| res.data()[i * p + j]).sum();
                assert_abs_diff_eq!(total, 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn sigma_estimates_recover_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let shape = [3usize, 4];
        let p: usize = shape.iter().product();
        let n = 20_000;
        let xdata = normals(&mut rng, p * n);
        let y: Vec<usize> = (0..n).map(|i| 1 + (i % 2)).collect();
        let x = DenseTensor::new(vec![3, 4, n], xdata).unwrap();
        let data = Dataset::new(x, None, y).unwrap();
        let res = residuals(&data, None).unwrap();
        let var_ref = pooled_first_entry_variance(&res);
        let est = estimate_sigmas(&res, var_ref).unwrap();
        assert_eq!(est.sigmas.len(), 2);
        for (mode, sigma) in est.sigmas.iter().enumerate() {
            let eye = Array2::eye(shape[mode]);
            for (got, exp) in sigma.iter().zip(eye.iter()) {
                assert_abs_diff_eq!(got, exp, epsilon = 0.05);
            }
        }
    }

    #[test]
    fn sigma_scaling_identities_hold_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let shape = [3usize, 2, 4];
        let p: usize = shape.iter().product();
        let n = 50;
        let xdata = normals(&mut rng, p * n);
        let y: Vec<usize> = (0..n).map(|i| 1 + (i % 2)).collect();
        let x = DenseTensor::new(vec![3, 2, 4, n], xdata).unwrap();
        let data = Dataset::new(x, None, y).unwrap();
        let res = residuals(&data, None).unwrap();
        let var_ref = pooled_first_entry_variance(&res);
        let est = estimate_sigmas(&res, var_ref).unwrap();
        // Leading entries of all but the last mode are exactly one.
        assert_abs_diff_eq!(est.sigmas[0][(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(est.sigmas[1][(0, 0)], 1.0, epsilon = 1e-14);
        // The last mode carries the reference variance divided by the raw
        // leading entries of the other modes.
        let expected_last = var_ref * est.raw_first_entries[2]
            / est.raw_first_entries.iter().product::<f64>();
        assert_abs_diff_eq!(
            est.sigmas[2][(0, 0)],
            expected_last,
            epsilon = 1e-12 * expected_last.abs()
        );
        // Implied model variance of the leading tensor entry.
        let implied: f64 = est.sigmas.iter().map(|s| s[(0, 0)]).product();
        let normalizer: f64 = est.raw_first_entries[..2].iter().product();
        assert_abs_diff_eq!(
            implied * normalizer,
            var_ref,
            epsilon = 1e-12 * var_ref.abs()
        );
    }

    #[test]
    fn sigma_estimates_are_invariant_to_observation_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = 6;
        let n = 24;
        let xdata = normals(&mut rng, p * n);
        let y: Vec<usize> = (0..n).map(|i| 1 + (i % 2)).collect();
        let x = DenseTensor::new(vec![2, 3, n], xdata).unwrap();
        let data = Dataset::new(x, None, y).unwrap();
        let est = {
            let res = residuals(&data, None).unwrap();
            estimate_sigmas(&res, pooled_first_entry_variance(&res)).unwrap()
        };
        let perm: Vec<usize> = (0..n).rev().collect();
        let permuted = data.subset(&perm).unwrap();
        let est_perm = {
            let res = residuals(&permuted, None).unwrap();
            estimate_sigmas(&res, pooled_first_entry_variance(&res)).unwrap()
        };
        for (a, b) in est.sigmas.iter().zip(&est_perm.sigmas) {
            for (x1, x2) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(x1, x2, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pd_condition_cases() {
        assert_eq!(check_pd_condition(10, 2, &[4, 4]), vec![true, true]);
        assert_eq!(check_pd_condition(3, 2, &[2, 2]), vec![false, false]);
        assert_eq!(check_pd_condition(2, 2, &[5, 5]), vec![false, false]);
        assert_eq!(check_pd_condition(100, 4, &[64, 64]), vec![true, true]);
    }

    #[test]
    fn perturbation_shifts_the_diagonal() {
        let zero = Array2::zeros((3, 3));
        let out = perturb_sigma(&zero, 0.1);
        for i in 0..3 {
            assert_eq!(out[(i, i)], 0.1);
        }
        let eye = Array2::eye(2);
        let out = perturb_sigma(&eye, 1.0);
        assert_eq!(out[(0, 0)], 2.0);
        assert_eq!(out[(0, 1)], 0.0);

        // A rank-deficient matrix becomes positive definite.
        let mut low = Array2::zeros((3, 3));
        low[(0, 0)] = 1.0;
        low[(0, 1)] = 1.0;
        low[(1, 0)] = 1.0;
        low[(1, 1)] = 1.0;
        let gamma = 0.05;
        let fixed = perturb_sigma(&low, gamma);
        let (values, _) = linalg::sym_eigen(&fixed).unwrap();
        assert!(values.iter().all(|&l| l >= gamma - 1e-12));
    }

    #[test]
    fn default_perturbation_is_a_fraction_of_the_mean_diagonal() {
        let mut sigma = Array2::eye(4);
        sigma[(0, 0)] = 3.0;
        let gamma = default_perturbation(&sigma);
        assert_abs_diff_eq!(gamma, 1e-4 * 1.5, epsilon = 1e-18);
    }
}
