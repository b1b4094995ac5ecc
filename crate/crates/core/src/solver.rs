//! Group-lasso coordinate descent for the sparse discriminant coefficients.
//!
//! Given per-mode covariance estimates `Sigma_1, ..., Sigma_M` and the mean
//! differences `delta_k = vec(mu_k - mu_1)` for classes `k = 2..=K`, the
//! solver minimizes
//!
//! ```text
//! sum_k [ 1/2 beta_k' (Sigma_M kron ... kron Sigma_1) beta_k - delta_k' beta_k ]
//!     + lambda * sum_j || (beta_2j, ..., beta_Kj) ||_2
//! ```
//!
//! by exact blockwise minimization over vec positions `j`. The Kronecker
//! covariance is never materialized: because position `j` has multi-index
//! `(j_1, ..., j_M)`, the coupling between positions `j'` and `j` is the
//! scalar `prod_m Sigma_m[j'_m, j_m]`, so one block update touches only the
//! active positions and costs `O(M * K * |active|)`.
//!
//! The block update has a closed form. With `sigma_jj = prod_m
//! Sigma_m[j_m, j_m]` and the partial residual score
//! `tilde_j = (delta_.j - coupling of all other active blocks) / sigma_jj`,
//! the minimizer in block `j` is the group soft-thresholding
//! `tilde_j * (1 - (lambda / sigma_jj) / ||tilde_j||)_+`.
//!
//! A fit alternates two kinds of passes. Cycles run the block updates over
//! the active set in ascending position order until no coefficient moves by
//! more than the current threshold. A screening pass then computes the exact
//! gradient scores of all `p` positions at once by applying each `Sigma_m`
//! along its mode (cost `O(K * p * sum_m p_m)`, never touching the Kronecker
//! product): zero blocks whose scores demand a nonzero update join the
//! active set, and the same scores give the largest first-order (KKT)
//! residual. The fit ends when a screening pass certifies residuals at or
//! below `tol`; when a pass activates nothing but the residual is still too
//! large, the cycle threshold is tightened so the active set is solved more
//! precisely. Each cycle of exact block minimizations cannot increase the
//! objective, so the per-pass objective trace is nonincreasing.

use ndarray::Array2;
use thiserror::Error;

use crate::tensor::linear_to_multi_index;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("no covariance factors given")]
    NoModes,
    #[error("covariance factor {mode} is {rows}x{cols}, expected square")]
    FactorNotSquare { mode: usize, rows: usize, cols: usize },
    #[error("covariance factor {mode} has nonpositive diagonal entry at {index}")]
    NonPositiveDiagonal { mode: usize, index: usize },
    #[error("mean-difference matrix has {cols} columns, expected {expected}")]
    DeltaColumns { cols: usize, expected: usize },
    #[error("mean-difference matrix has no rows (need at least two classes)")]
    NoContrasts,
    #[error("coefficient matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    BetaShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("penalty {lambda} must be finite and nonnegative")]
    BadLambda { lambda: f64 },
    #[error("invalid configuration: {reason}")]
    BadConfig { reason: String },
}

/// Inputs of one penalized problem: per-mode covariance estimates and one
/// row of vectorized mean differences per class contrast (classes `2..=K`
/// against class 1).
#[derive(Debug, Clone, Copy)]
pub struct SolverInputs<'a> {
    pub sigmas: &'a [Array2<f64>],
    pub delta: &'a Array2<f64>,
}

impl<'a> SolverInputs<'a> {
    pub fn shape(&self) -> Vec<usize> {
        self.sigmas.iter().map(|s| s.nrows()).collect()
    }

    pub fn num_positions(&self) -> usize {
        self.sigmas.iter().map(|s| s.nrows()).product()
    }

    pub fn num_contrasts(&self) -> usize {
        self.delta.nrows()
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.sigmas.is_empty() {
            return Err(SolverError::NoModes);
        }
        for (mode, sigma) in self.sigmas.iter().enumerate() {
            if sigma.nrows() != sigma.ncols() {
                return Err(SolverError::FactorNotSquare {
                    mode,
                    rows: sigma.nrows(),
                    cols: sigma.ncols(),
                });
            }
            for i in 0..sigma.nrows() {
                if !(sigma[(i, i)] > 0.0) {
                    return Err(SolverError::NonPositiveDiagonal { mode, index: i });
                }
            }
        }
        if self.delta.nrows() == 0 {
            return Err(SolverError::NoContrasts);
        }
        let p = self.num_positions();
        if self.delta.ncols() != p {
            return Err(SolverError::DeltaColumns {
                cols: self.delta.ncols(),
                expected: p,
            });
        }
        Ok(())
    }
}

/// Penalty sequence for a path fit.
#[derive(Debug, Clone)]
pub enum LambdaGrid {
    /// `count` geometrically spaced values from the data-driven maximum down
    /// to `min_ratio` times it.
    Auto { count: usize, min_ratio: f64 },
    /// User-specified values, fitted in the given order with warm starts.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub lambdas: LambdaGrid,
    /// Convergence threshold on the first-order residuals; also the starting
    /// threshold on coefficient moves within active-set cycles.
    pub tol: f64,
    /// Cap on passes (active-set cycles plus screening passes) per penalty
    /// value; hitting it is reported via [`SingleFit::converged`], not an
    /// error.
    pub max_sweeps: usize,
    /// Record the solver objective after every pass.
    pub trace_objective: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambdas: LambdaGrid::Auto {
                count: 50,
                min_ratio: 0.05,
            },
            tol: 1e-6,
            max_sweeps: 500,
            trace_objective: false,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol > 0.0) {
            return Err(SolverError::BadConfig {
                reason: format!("tol must be positive, got {}", self.tol),
            });
        }
        if self.max_sweeps == 0 {
            return Err(SolverError::BadConfig {
                reason: "max_sweeps must be at least 1".into(),
            });
        }
        match &self.lambdas {
            LambdaGrid::Auto { count, min_ratio } => {
                if *count == 0 {
                    return Err(SolverError::BadConfig {
                        reason: "lambda count must be at least 1".into(),
                    });
                }
                if !(*min_ratio > 0.0 && *min_ratio <= 1.0) {
                    return Err(SolverError::BadConfig {
                        reason: format!("lambda min ratio {min_ratio} must be in (0, 1]"),
                    });
                }
            }
            LambdaGrid::Explicit(values) => {
                if values.is_empty() {
                    return Err(SolverError::BadConfig {
                        reason: "explicit lambda grid is empty".into(),
                    });
                }
                for &l in values {
                    if !(l.is_finite() && l >= 0.0) {
                        return Err(SolverError::BadLambda { lambda: l });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Result of one penalty value.
#[derive(Debug, Clone)]
pub struct SingleFit {
    pub lambda: f64,
    /// Coefficients, one row per class contrast, one column per vec position.
    pub beta: Array2<f64>,
    /// Positions with a nonzero coefficient block, ascending.
    pub selected: Vec<usize>,
    /// Quadratic-form objective at `beta` as reported by
    /// [`evaluate_objective`].
    pub objective: f64,
    /// The objective the passes minimize (halved quadratic); nonincreasing
    /// along the per-pass trace.
    pub penalized_loss: f64,
    /// Passes taken: active-set cycles plus screening passes.
    pub sweeps: usize,
    pub converged: bool,
    /// Largest first-order residual at the returned coefficients, measured
    /// by the final screening pass; at most the configured tolerance
    /// whenever `converged` is true.
    pub kkt_residual: f64,
    /// Per-pass values of `penalized_loss` when tracing is enabled.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitPath {
    /// Smallest penalty that keeps every block at zero.
    pub lambda_max: f64,
    /// One fit per grid value, in grid order.
    pub fits: Vec<SingleFit>,
    /// Peak f64-equivalent scalars held by solver working storage, outputs
    /// and inputs excluded.
    pub peak_working_scalars: usize,
}

/// In-place group soft-thresholding: scales `v` by `(1 - threshold/||v||)_+`,
/// zeroing it when its norm is at or below the threshold. Returns the new
/// norm.
pub fn group_soft_threshold(v: &mut [f64], threshold: f64) -> f64 {
    debug_assert!(threshold >= 0.0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > threshold {
        let scale = 1.0 - threshold / norm;
        for x in v.iter_mut() {
            *x *= scale;
        }
        norm - threshold
    } else {
        for x in v.iter_mut() {
            *x = 0.0;
        }
        0.0
    }
}

/// Smallest penalty at which the zero solution is stationary:
/// `max_j || delta_.j ||_2`.
pub fn lambda_max(inputs: &SolverInputs) -> Result<f64, SolverError> {
    inputs.validate()?;
    let p = inputs.num_positions();
    let mut best = 0.0f64;
    for j in 0..p {
        let norm = inputs
            .delta
            .column(j)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        best = best.max(norm);
    }
    Ok(best)
}

/// Materializes the penalty grid a config describes for these inputs.
pub fn lambda_grid(inputs: &SolverInputs, config: &SolverConfig) -> Result<Vec<f64>, SolverError> {
    config.validate()?;
    match &config.lambdas {
        LambdaGrid::Explicit(values) => Ok(values.clone()),
        LambdaGrid::Auto { count, min_ratio } => {
            let top = lambda_max(inputs)?;
            if top == 0.0 {
                return Ok(vec![0.0]);
            }
            if *count == 1 {
                return Ok(vec![top]);
            }
            let grid = (0..*count)
                .map(|i| top * min_ratio.powf(i as f64 / (*count as f64 - 1.0)))
                .collect();
            Ok(grid)
        }
    }
}

/// Per-problem constants shared by all sweeps.
struct Fixed {
    /// Row-major copies of the covariance factors, one per mode.
    sig: Vec<Vec<f64>>,
    extents: Vec<usize>,
    /// Multi-indices of every position, mode-major: `idx[j*M + m]`.
    idx: Vec<u32>,
    /// `prod_m Sigma_m[j_m, j_m]` per position.
    diag: Vec<f64>,
    /// Mean differences, position-major: `delta[j*km1 + k]`.
    delta: Vec<f64>,
    p: usize,
    order: usize,
    km1: usize,
}

impl Fixed {
    fn new(inputs: &SolverInputs) -> Self {
        let extents: Vec<usize> = inputs.sigmas.iter().map(|s| s.nrows()).collect();
        let p: usize = extents.iter().product();
        let order = extents.len();
        let km1 = inputs.delta.nrows();
        let sig: Vec<Vec<f64>> = inputs
            .sigmas
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        let mut idx = vec![0u32; p * order];
        let mut diag = vec![0.0; p];
        for j in 0..p {
            let multi = linear_to_multi_index(j, &extents).expect("position in range");
            let mut d = 1.0;
            for (m, &i) in multi.iter().enumerate() {
                idx[j * order + m] = i as u32;
                d *= sig[m][i * extents[m] + i];
            }
            diag[j] = d;
        }
        let mut delta = vec![0.0; p * km1];
        for j in 0..p {
            for k in 0..km1 {
                delta[j * km1 + k] = inputs.delta[(k, j)];
            }
        }
        Fixed {
            sig,
            extents,
            idx,
            diag,
            delta,
            p,
            order,
            km1,
        }
    }

    /// Coupling `prod_m Sigma_m[j'_m, j_m]` between two positions, using the
    /// precomputed row offsets of position `j`.
    #[inline]
    fn coupling(&self, row_offsets: &[usize], jp: usize) -> f64 {
        let base = jp * self.order;
        let mut w = 1.0;
        for m in 0..self.order {
            w *= self.sig[m][row_offsets[m] + self.idx[base + m] as usize];
        }
        w
    }

    fn row_offsets(&self, j: usize, out: &mut [usize]) {
        let base = j * self.order;
        for m in 0..self.order {
            out[m] = self.idx[base + m] as usize * self.extents[m];
        }
    }

    /// Applies covariance factor `m` along its mode:
    /// `y = (I kron Sigma_m kron I) x` for a length-`p` vector `x` in
    /// first-index-fastest position order.
    fn mode_apply(&self, m: usize, x: &[f64], y: &mut [f64]) {
        let e = self.extents[m];
        let low: usize = self.extents[..m].iter().product();
        let block = low * e;
        let high = self.p / block;
        let sig = &self.sig[m];
        if low == 1 {
            // Fibers along this mode are contiguous: small matrix-vector
            // products per fiber.
            for h in 0..high {
                let xb = &x[h * e..(h + 1) * e];
                let yb = &mut y[h * e..(h + 1) * e];
                for (i, slot) in yb.iter_mut().enumerate() {
                    let row = &sig[i * e..(i + 1) * e];
                    let mut acc = 0.0;
                    for (w, v) in row.iter().zip(xb) {
                        acc += w * v;
                    }
                    *slot = acc;
                }
            }
        } else {
            // Fibers stride by `low`: accumulate whole contiguous panels so
            // the inner loop stays unit-stride.
            y.iter_mut().for_each(|v| *v = 0.0);
            for h in 0..high {
                let base = h * block;
                for i in 0..e {
                    let yb = base + i * low;
                    for jj in 0..e {
                        let w = sig[i * e + jj];
                        if w == 0.0 {
                            continue;
                        }
                        let xb = base + jj * low;
                        let xs = &x[xb..xb + low];
                        let ys = &mut y[yb..yb + low];
                        for (slot, v) in ys.iter_mut().zip(xs) {
                            *slot += w * v;
                        }
                    }
                }
            }
        }
    }

    /// Couplings of position `j` against the active set, accumulated into
    /// per-contrast scores: `scores[k] = sum_{j' active} beta_k[j'] * w(j', j)`.
    fn accumulate_scores(
        &self,
        beta: &[f64],
        active: &[u32],
        row_offsets: &[usize],
        scores: &mut [f64],
    ) {
        scores.iter_mut().for_each(|s| *s = 0.0);
        for &jp in active {
            let jp = jp as usize;
            let w = self.coupling(row_offsets, jp);
            if w == 0.0 {
                continue;
            }
            let block = &beta[jp * self.km1..(jp + 1) * self.km1];
            for (s, &b) in scores.iter_mut().zip(block) {
                *s += b * w;
            }
        }
    }

    fn footprint_scalars(&self) -> usize {
        let bytes = self.sig.iter().map(|s| s.len() * 8).sum::<usize>()
            + self.idx.len() * 4
            + self.diag.len() * 8
            + self.delta.len() * 8
            + self.extents.len() * 8;
        bytes.div_ceil(8)
    }
}

/// Mutable solver state.
struct State {
    /// Coefficients, position-major blocks of `km1` contrasts.
    beta: Vec<f64>,
    active: Vec<u32>,
    mask: Vec<bool>,
    scores: Vec<f64>,
    tilde: Vec<f64>,
    rows: Vec<usize>,
    /// Gradient scores of every position, position-major; valid right after
    /// a screening pass.
    full_scores: Vec<f64>,
    /// Ping-pong buffers for the per-mode applications.
    scratch_a: Vec<f64>,
    scratch_b: Vec<f64>,
    /// Running smooth objective part (half quadratic minus linear), kept
    /// current by the exact per-block decrements of each cycle.
    smooth: f64,
    /// Running sum of block norms.
    penalty: f64,
}

impl State {
    fn new(fixed: &Fixed) -> Self {
        State {
            beta: vec![0.0; fixed.p * fixed.km1],
            active: Vec::new(),
            mask: vec![false; fixed.p],
            scores: vec![0.0; fixed.km1],
            tilde: vec![0.0; fixed.km1],
            rows: vec![0; fixed.order],
            full_scores: vec![0.0; fixed.p * fixed.km1],
            scratch_a: vec![0.0; fixed.p],
            scratch_b: vec![0.0; fixed.p],
            smooth: 0.0,
            penalty: 0.0,
        }
    }

    fn footprint_scalars(&self) -> usize {
        let bytes = self.beta.capacity() * 8
            + self.active.capacity() * 4
            + self.mask.capacity()
            + (self.scores.capacity() + self.tilde.capacity()) * 8
            + self.rows.capacity() * 8
            + self.full_scores.capacity() * 8
            + (self.scratch_a.capacity() + self.scratch_b.capacity()) * 8;
        bytes.div_ceil(8)
    }

    fn load(&mut self, fixed: &Fixed, beta: &Array2<f64>) {
        for j in 0..fixed.p {
            for k in 0..fixed.km1 {
                self.beta[j * fixed.km1 + k] = beta[(k, j)];
            }
        }
        self.rebuild_active(fixed);
        self.recompute_loss_parts(fixed);
    }

    fn rebuild_active(&mut self, fixed: &Fixed) {
        self.active.clear();
        for j in 0..fixed.p {
            let block = &self.beta[j * fixed.km1..(j + 1) * fixed.km1];
            let nonzero = block.iter().any(|&b| b != 0.0);
            self.mask[j] = nonzero;
            if nonzero {
                self.active.push(j as u32);
            }
        }
    }

    fn compact(&mut self) {
        let mask = &self.mask;
        self.active.retain(|&j| mask[j as usize]);
        // Late activations are pushed at the back; restore ascending order so
        // every sweep visits blocks in the same fixed position order.
        self.active.sort_unstable();
    }

    /// One cycle of exact block updates over the active set, in ascending
    /// position order. Returns the largest absolute coefficient change.
    /// Keeps the running objective parts current: with the rest of the
    /// coefficients fixed, block `j` contributes
    /// `d/2 ||b||^2 - d tilde_j' b` to the smooth part and `||b||` to the
    /// penalty sum, so each update adjusts both by its exact decrement.
    fn sweep(&mut self, fixed: &Fixed, lambda: f64) -> f64 {
        let mut max_change = 0.0f64;
        let count = self.active.len();
        for slot in 0..count {
            let j = self.active[slot] as usize;
            fixed.row_offsets(j, &mut self.rows);
            fixed.accumulate_scores(&self.beta, &self.active, &self.rows, &mut self.scores);
            let d = fixed.diag[j];
            let block_start = j * fixed.km1;
            let mut old_norm2 = 0.0;
            let mut old_smooth = 0.0;
            for k in 0..fixed.km1 {
                let b = self.beta[block_start + k];
                let own = b * d;
                let t = (fixed.delta[block_start + k] - (self.scores[k] - own)) / d;
                // Keep the pristine partial residual around; `tilde` is
                // thresholded in place below.
                self.scores[k] = t;
                self.tilde[k] = t;
                old_smooth += 0.5 * d * b * b - d * t * b;
                old_norm2 += b * b;
            }
            group_soft_threshold(&mut self.tilde, lambda / d);
            let mut nonzero = false;
            let mut new_norm2 = 0.0;
            let mut new_smooth = 0.0;
            for k in 0..fixed.km1 {
                let new = self.tilde[k];
                let t = self.scores[k];
                let old = self.beta[block_start + k];
                let change = (new - old).abs();
                if change > max_change {
                    max_change = change;
                }
                self.beta[block_start + k] = new;
                nonzero |= new != 0.0;
                new_smooth += 0.5 * d * new * new - d * t * new;
                new_norm2 += new * new;
            }
            self.smooth += new_smooth - old_smooth;
            self.penalty += new_norm2.sqrt() - old_norm2.sqrt();
            // `j` is already in the active list; only the mask needs to
            // track whether its block is currently nonzero so compaction
            // can drop blocks that fell back to zero.
            self.mask[j] = nonzero;
        }
        self.compact();
        max_change
    }

    /// Computes the gradient scores of every position at the current
    /// coefficients by applying each covariance factor along its mode,
    /// leaving them in `full_scores` (position-major).
    fn compute_full_scores(&mut self, fixed: &Fixed) {
        if self.active.is_empty() {
            self.full_scores.iter_mut().for_each(|s| *s = 0.0);
            return;
        }
        for k in 0..fixed.km1 {
            for j in 0..fixed.p {
                self.scratch_a[j] = self.beta[j * fixed.km1 + k];
            }
            let mut in_a = true;
            for m in 0..fixed.order {
                if in_a {
                    fixed.mode_apply(m, &self.scratch_a, &mut self.scratch_b);
                } else {
                    fixed.mode_apply(m, &self.scratch_b, &mut self.scratch_a);
                }
                in_a = !in_a;
            }
            let out = if in_a { &self.scratch_a } else { &self.scratch_b };
            for j in 0..fixed.p {
                self.full_scores[j * fixed.km1 + k] = out[j];
            }
        }
    }

    /// Screening pass: exact scores of every position from the current
    /// coefficients. Measures the largest first-order violation over all
    /// blocks and adds every zero block whose score demands a nonzero
    /// update to the active set (at value zero; the next cycle sets it).
    /// Returns the violation and the number of activations.
    fn screen(&mut self, fixed: &Fixed, lambda: f64) -> (f64, usize) {
        self.compute_full_scores(fixed);
        let mut worst = 0.0f64;
        let mut activated = 0usize;
        for j in 0..fixed.p {
            let base = j * fixed.km1;
            let block = &self.beta[base..base + fixed.km1];
            let norm = block.iter().map(|b| b * b).sum::<f64>().sqrt();
            if norm > 0.0 {
                for k in 0..fixed.km1 {
                    let g = self.full_scores[base + k] - fixed.delta[base + k];
                    let v = (g + lambda * block[k] / norm).abs();
                    if v > worst {
                        worst = v;
                    }
                }
            } else {
                let mut g2 = 0.0;
                for k in 0..fixed.km1 {
                    let g = self.full_scores[base + k] - fixed.delta[base + k];
                    g2 += g * g;
                }
                let gnorm = g2.sqrt();
                if gnorm > lambda && !self.mask[j] {
                    self.mask[j] = true;
                    self.active.push(j as u32);
                    activated += 1;
                }
                let v = (gnorm - lambda).max(0.0);
                if v > worst {
                    worst = v;
                }
            }
        }
        if activated > 0 {
            self.active.sort_unstable();
        }
        (worst, activated)
    }

    /// Largest first-order violation at the current iterate: active blocks
    /// must satisfy `g_j + lambda * beta_j / ||beta_j|| = 0` componentwise,
    /// zero blocks `||g_j||_2 <= lambda`, where `g_j` is the gradient of the
    /// smooth part.
    fn kkt_violation(&mut self, fixed: &Fixed, lambda: f64) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..fixed.p {
            fixed.row_offsets(j, &mut self.rows);
            fixed.accumulate_scores(&self.beta, &self.active, &self.rows, &mut self.scores);
            let block = &self.beta[j * fixed.km1..(j + 1) * fixed.km1];
            let norm = block.iter().map(|b| b * b).sum::<f64>().sqrt();
            if norm > 0.0 {
                for k in 0..fixed.km1 {
                    let g = self.scores[k] - fixed.delta[j * fixed.km1 + k];
                    let v = (g + lambda * block[k] / norm).abs();
                    worst = worst.max(v);
                }
            } else {
                let gnorm = (0..fixed.km1)
                    .map(|k| {
                        let g = self.scores[k] - fixed.delta[j * fixed.km1 + k];
                        g * g
                    })
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max((gnorm - lambda).max(0.0));
            }
        }
        worst
    }

    /// Recomputes the objective parts exactly through the couplings of the
    /// active set, refreshing the running accumulators.
    fn recompute_loss_parts(&mut self, fixed: &Fixed) {
        let mut quad = 0.0;
        let mut linear = 0.0;
        let mut penalty = 0.0;
        let active = self.active.clone();
        for &j in &active {
            let j = j as usize;
            fixed.row_offsets(j, &mut self.rows);
            fixed.accumulate_scores(&self.beta, &active, &self.rows, &mut self.scores);
            let block = &self.beta[j * fixed.km1..(j + 1) * fixed.km1];
            let mut norm2 = 0.0;
            for k in 0..fixed.km1 {
                quad += block[k] * self.scores[k];
                linear += block[k] * fixed.delta[j * fixed.km1 + k];
                norm2 += block[k] * block[k];
            }
            penalty += norm2.sqrt();
        }
        self.smooth = 0.5 * quad - linear;
        self.penalty = penalty;
    }

    /// Solver objective at the current iterate, recomputed exactly.
    fn penalized_loss(&mut self, fixed: &Fixed, lambda: f64) -> f64 {
        self.recompute_loss_parts(fixed);
        self.smooth + lambda * self.penalty
    }
}

fn extract_fit(
    fixed: &Fixed,
    state: &mut State,
    lambda: f64,
    sweeps: usize,
    converged: bool,
    kkt_residual: f64,
    trace: Vec<f64>,
) -> SingleFit {
    let mut beta = Array2::zeros((fixed.km1, fixed.p));
    for j in 0..fixed.p {
        for k in 0..fixed.km1 {
            beta[(k, j)] = state.beta[j * fixed.km1 + k];
        }
    }
    // The active list may carry blocks a screening pass admitted that are
    // still at zero; only blocks with a nonzero coefficient count as
    // selected.
    let selected: Vec<usize> = state
        .active
        .iter()
        .map(|&j| j as usize)
        .filter(|&j| {
            state.beta[j * fixed.km1..(j + 1) * fixed.km1]
                .iter()
                .any(|&b| b != 0.0)
        })
        .collect();
    let loss = state.penalized_loss(fixed, lambda);
    let penalty: f64 = selected
        .iter()
        .map(|&j| {
            state.beta[j * fixed.km1..(j + 1) * fixed.km1]
                .iter()
                .map(|b| b * b)
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    // Quadratic-form objective = 2 * smooth part + penalty term.
    let objective = 2.0 * (loss - lambda * penalty) + lambda * penalty;
    SingleFit {
        lambda,
        beta,
        selected,
        objective,
        penalized_loss: loss,
        sweeps,
        converged,
        kkt_residual,
        objective_trace: trace,
    }
}

fn run_single(
    fixed: &Fixed,
    state: &mut State,
    lambda: f64,
    config: &SolverConfig,
) -> SingleFit {
    let mut sweeps = 0;
    let mut converged = false;
    let mut trace = Vec::new();
    let mut kkt_residual;
    let mut inner_tol = config.tol;
    loop {
        // Cycle the active set until it stops moving at the current
        // threshold (or the pass budget runs out).
        loop {
            if state.active.is_empty() {
                break;
            }
            let change = state.sweep(fixed, lambda);
            sweeps += 1;
            if config.trace_objective {
                trace.push(state.smooth + lambda * state.penalty);
            }
            if change <= inner_tol || sweeps >= config.max_sweeps {
                break;
            }
        }
        // Screening pass: exact scores of all positions give the
        // first-order residual and any newly needed blocks. It does not
        // move coefficients, so the residual it reports is the residual of
        // the returned iterate.
        let (violation, activated) = state.screen(fixed, lambda);
        sweeps += 1;
        if config.trace_objective {
            trace.push(state.smooth + lambda * state.penalty);
        }
        kkt_residual = violation;
        if violation <= config.tol {
            converged = true;
            break;
        }
        if sweeps >= config.max_sweeps {
            break;
        }
        if activated == 0 {
            // Nothing new to bring in: the active set itself is not solved
            // precisely enough for the residual target yet.
            inner_tol *= 0.25;
        } else {
            inner_tol = config.tol;
        }
    }
    extract_fit(fixed, state, lambda, sweeps, converged, kkt_residual, trace)
}

/// Fits one penalty value, optionally warm-started.
pub fn fit_single(
    inputs: &SolverInputs,
    lambda: f64,
    warm_start: Option<&Array2<f64>>,
    config: &SolverConfig,
) -> Result<SingleFit, SolverError> {
    inputs.validate()?;
    config.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SolverError::BadLambda { lambda });
    }
    let fixed = Fixed::new(inputs);
    let mut state = State::new(&fixed);
    if let Some(beta) = warm_start {
        check_beta_shape(beta, &fixed)?;
        state.load(&fixed, beta);
    }
    Ok(run_single(&fixed, &mut state, lambda, config))
}

/// Fits the whole penalty grid with warm starts, in grid order.
pub fn fit_path(inputs: &SolverInputs, config: &SolverConfig) -> Result<FitPath, SolverError> {
    inputs.validate()?;
    config.validate()?;
    let grid = lambda_grid(inputs, config)?;
    let top = lambda_max(inputs)?;
    let fixed = Fixed::new(inputs);
    let mut state = State::new(&fixed);
    let mut fits = Vec::with_capacity(grid.len());
    let mut peak = fixed.footprint_scalars() + state.footprint_scalars();
    for &lambda in &grid {
        fits.push(run_single(&fixed, &mut state, lambda, config));
        peak = peak.max(fixed.footprint_scalars() + state.footprint_scalars());
    }
    Ok(FitPath {
        lambda_max: top,
        fits,
        peak_working_scalars: peak,
    })
}

fn check_beta_shape(beta: &Array2<f64>, fixed: &Fixed) -> Result<(), SolverError> {
    if beta.nrows() != fixed.km1 || beta.ncols() != fixed.p {
        return Err(SolverError::BetaShape {
            rows: beta.nrows(),
            cols: beta.ncols(),
            expected_rows: fixed.km1,
            expected_cols: fixed.p,
        });
    }
    Ok(())
}

/// Reference computation of the partial residual score of block `j`: the
/// mean difference minus the coupling of every other nonzero block, divided
/// by the diagonal coupling. Group-soft-thresholding this vector at
/// `lambda / prod_m Sigma_m[j_m, j_m]` reproduces the solver's block update.
pub fn partial_residual_score(
    beta: &Array2<f64>,
    inputs: &SolverInputs,
    j: usize,
) -> Result<Vec<f64>, SolverError> {
    inputs.validate()?;
    let fixed = Fixed::new(inputs);
    check_beta_shape(beta, &fixed)?;
    if j >= fixed.p {
        return Err(SolverError::BadConfig {
            reason: format!("position {j} out of range for {} positions", fixed.p),
        });
    }
    let mut rows = vec![0usize; fixed.order];
    fixed.row_offsets(j, &mut rows);
    let d = fixed.diag[j];
    let mut out = vec![0.0; fixed.km1];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut coupled = 0.0;
        for jp in 0..fixed.p {
            if jp == j {
                continue;
            }
            let b = beta[(k, jp)];
            if b != 0.0 {
                coupled += b * fixed.coupling(&rows, jp);
            }
        }
        *slot = (inputs.delta[(k, j)] - coupled) / d;
    }
    Ok(out)
}

fn objective_parts(
    beta: &Array2<f64>,
    inputs: &SolverInputs,
) -> Result<(f64, f64, f64), SolverError> {
    inputs.validate()?;
    let fixed = Fixed::new(inputs);
    check_beta_shape(beta, &fixed)?;
    let active: Vec<usize> = (0..fixed.p)
        .filter(|&j| (0..fixed.km1).any(|k| beta[(k, j)] != 0.0))
        .collect();
    let mut rows = vec![0usize; fixed.order];
    let mut quad = 0.0;
    let mut linear = 0.0;
    let mut penalty = 0.0;
    for &j in &active {
        fixed.row_offsets(j, &mut rows);
        let mut norm2 = 0.0;
        for k in 0..fixed.km1 {
            let mut score = 0.0;
            for &jp in &active {
                let b = beta[(k, jp)];
                if b != 0.0 {
                    score += b * fixed.coupling(&rows, jp);
                }
            }
            quad += beta[(k, j)] * score;
            linear += beta[(k, j)] * inputs.delta[(k, j)];
            norm2 += beta[(k, j)] * beta[(k, j)];
        }
        penalty += norm2.sqrt();
    }
    Ok((quad, linear, penalty))
}

/// Quadratic-form objective
/// `sum_k [beta_k' Sigma beta_k - 2 delta_k' beta_k] + lambda * sum_j ||beta_.j||`
/// evaluated through the mode couplings (no Kronecker matrix).
pub fn evaluate_objective(
    beta: &Array2<f64>,
    inputs: &SolverInputs,
    lambda: f64,
) -> Result<f64, SolverError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SolverError::BadLambda { lambda });
    }
    let (quad, linear, penalty) = objective_parts(beta, inputs)?;
    Ok(quad - 2.0 * linear + lambda * penalty)
}

/// The objective the sweeps descend: half the quadratic term, same penalty.
pub fn penalized_loss(
    beta: &Array2<f64>,
    inputs: &SolverInputs,
    lambda: f64,
) -> Result<f64, SolverError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SolverError::BadLambda { lambda });
    }
    let (quad, linear, penalty) = objective_parts(beta, inputs)?;
    Ok(0.5 * quad - linear + lambda * penalty)
}

/// Largest first-order violation of `beta` for penalty `lambda`; zero (up to
/// tolerance) exactly at the minimizer.
pub fn kkt_violation(
    beta: &Array2<f64>,
    inputs: &SolverInputs,
    lambda: f64,
) -> Result<f64, SolverError> {
    inputs.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SolverError::BadLambda { lambda });
    }
    let fixed = Fixed::new(inputs);
    check_beta_shape(beta, &fixed)?;
    let mut state = State::new(&fixed);
    state.load(&fixed, beta);
    Ok(state.kkt_violation(&fixed, lambda))
}
