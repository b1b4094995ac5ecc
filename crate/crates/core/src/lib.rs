#![forbid(unsafe_code)]

//! Tensor discriminant analysis with covariate adjustment (the CATCH model).
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense multi-way arrays, matricization, mode products and
//!   Tucker contractions in the vectorization order used everywhere else.
//! * [`linalg`]: small dense symmetric-matrix helpers (Cholesky, Jacobi
//!   eigendecomposition, matrix square roots).
//! * [`io`]: the CTB tensor binary format, numeric CSV files and model
//!   directory persistence.
//! * [`estimation`]: moment estimators for the model parameters: priors,
//!   covariate block, covariate-effect tensor, class means and the
//!   per-mode covariance estimates with their scaling convention.
//! * [`solver`]: blockwise coordinate descent for the group-lasso
//!   discriminant problem, exploiting the Kronecker structure of the
//!   covariance so the full `prod(p_m) x prod(p_m)` matrix is never formed.
//! * [`model`]: the fitted-model container and the end-to-end fit pipeline.
//! * [`classifier`]: the plug-in Bayes rule, error rates, variable-selection
//!   metrics and stratified cross-validation.
//! * [`simulation`]: data generators for the benchmark model catalog, the
//!   closed-form rates of the introductory two-by-two example, and the
//!   Monte-Carlo experiment harness.

pub mod classifier;
pub mod estimation;
pub mod io;
pub mod linalg;
pub mod model;
pub mod simulation;
pub mod solver;
pub mod tensor;
