//! Function-on-function partial quantile regression.
//!
//! Fits the conditional quantile of a functional response on one or more
//! functional predictors: curves are projected onto clamped B-spline bases,
//! components are extracted iteratively from partial quantile covariances
//! with deflation, and a final quantile regression on the retained components
//! yields coefficient surfaces and predictions. The crate also provides the
//! squared-loss partial least squares baseline, BIC-based model selection,
//! forward predictor selection, case-sampling bootstrap prediction bands,
//! and a seeded Monte Carlo harness.

pub mod basis;
pub mod error;
pub mod grid;
pub mod numeric;
pub mod pqr;
pub mod qr;
pub mod select;

pub use basis::{block_diagonal_gram, build_bspline_basis, BasisSystem, CoefBlock, CompositeGram};
pub use error::{Error, Result};
pub use grid::{FunctionalSample, Grid};
pub use pqr::{
    assemble_zo, extract_components, finalize, fit_fpls, fit_fpqr, BasisSpec, Components,
    FitConfig, FpqrFit, Method, PqrState,
};
pub use qr::{check_loss, qr_oracle, quantile_cov_matrix, quantile_covariance, solve_qr, QrSolution};
pub use select::{bic_components, forward_select, select_n_components, SelectionTrace};
